use std::collections::HashMap;
use std::ops::{Deref, DerefMut};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, SQRT_HALF};
use super::params::{ParamId, ParamStore, WeightNormParam};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Unary {
    Relu,
    Sigmoid,
    Softsign,
    Softplus,
}

impl Unary {
    fn forward(self, x: f64) -> f64 {
        match self {
            Unary::Relu => kernels::relu(x),
            Unary::Sigmoid => kernels::sigmoid(x),
            Unary::Softsign => kernels::softsign(x),
            Unary::Softplus => kernels::softplus(x),
        }
    }

    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Softsign => {
                let d = 1.0 + x.abs();
                1.0 / (d * d)
            }
            Unary::Softplus => kernels::sigmoid(x),
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Residual(Var, Var),
    AddRow(Var, Var),
    SumAll(Var),
    Unary(Var, Unary),
    Linear { x: Var, w: Var, b: Var },
    Conv1d { x: Var, w: Var, b: Var, pad_left: usize },
    WeightNorm { v: Var, g: Var },
    Glu(Var),
    Dropout { x: Var, mask: Vec<f64> },
    AddToValueHalf { x: Var, bias: Var },
    MatMulNT { a: Var, b: Var, scale: f64 },
    MatMul { a: Var, b: Var },
    SoftmaxRows { x: Var, windows: Vec<(usize, usize)> },
    Embedding { table: Var, ids: Vec<usize> },
    Positional { rate: Var, d: usize, weight: f64 },
    Reshape(Var),
    L1 { pred: Var, target: Vec<f64>, weight: Vec<f64> },
    Bce { logits: Var, target: Vec<f64>, weight: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients for every node reached from the loss.
pub struct Grads(Vec<Option<Vec<f64>>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.0.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Eagerly evaluated reverse-mode tape.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("add", va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("sub", va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("mul", va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|x| x * s).collect();
        let t = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Scale(a, s))
    }

    /// `(a + b) · √0.5`.
    pub fn residual(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("residual", va, vb)?;
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| kernels::residual(x, y))
            .collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Residual(a, b)))
    }

    /// Adds a row vector to every row of a matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (vx, vr) = (self.value(x), self.value(row));
        let m = vx.cols();
        if vr.len() != m {
            return Err(Error::shape("add_row", format!("row of {} for {m} columns", vr.len())));
        }
        let data = vx
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + vr.data()[i % m])
            .collect();
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        Ok(self.push(t, Op::AddRow(x, row)))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    fn unary(&mut self, x: Var, f: Unary) -> Var {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&v| f.forward(v)).collect();
        let t = Tensor::new(vx.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Unary(x, f))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    /// Elementwise `x / (1 + |x|)`.
    pub fn softsign(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Softsign)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Softplus)
    }

    /// Affine map over the last axis: `x · W + b` with `W` shaped
    /// `[in × out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        if vw.shape().len() != 2 {
            return Err(Error::shape("linear", "weight must be a matrix"));
        }
        let (n_in, n_out) = (vw.shape()[0], vw.shape()[1]);
        let last = *vx.shape().last().expect("non-empty shape");
        if last != n_in || vb.len() != n_out {
            return Err(Error::shape(
                "linear",
                format!("input {:?}, weight {:?}, bias {}", vx.shape(), vw.shape(), vb.len()),
            ));
        }
        let rows = vx.len() / n_in;
        let mut out = vec![0.0; rows * n_out];
        for r in 0..rows {
            kernels::affine_row(
                &mut out[r * n_out..(r + 1) * n_out],
                &vx.data()[r * n_in..(r + 1) * n_in],
                vw.data(),
                vb.data(),
            );
        }
        let mut shape = vx.shape().to_vec();
        *shape.last_mut().expect("non-empty") = n_out;
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Linear { x, w, b }))
    }

    /// Length-preserving 1-D convolution over `[T × C_in]` with weight
    /// `[k × C_in × C_out]`. Causal mode pads `k − 1` zeros on the left,
    /// otherwise `(k − 1) / 2` on both sides.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, causal: bool) -> Result<Var> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        if vw.shape().len() != 3 {
            return Err(Error::shape("conv1d", "weight must be [k, c_in, c_out]"));
        }
        let (k, c_in, c_out) = (vw.shape()[0], vw.shape()[1], vw.shape()[2]);
        if k % 2 == 0 {
            return Err(Error::EvenKernel(k));
        }
        if vx.shape().len() != 2 || vx.cols() != c_in || vb.len() != c_out {
            return Err(Error::shape(
                "conv1d",
                format!("input {:?}, weight {:?}, bias {}", vx.shape(), vw.shape(), vb.len()),
            ));
        }
        let t_len = vx.rows();
        let pad_left = if causal { k - 1 } else { (k - 1) / 2 };
        let zeros = vec![0.0; c_in];
        let tap = c_in * c_out;
        let mut out = vec![0.0; t_len * c_out];
        for t in 0..t_len {
            let row = &mut out[t * c_out..(t + 1) * c_out];
            row.copy_from_slice(vb.data());
            for j in 0..k {
                let src = (t + j).checked_sub(pad_left).filter(|&s| s < t_len);
                let input = match src {
                    Some(s) => vx.row(s),
                    None => &zeros,
                };
                kernels::accumulate_row(row, input, &vw.data()[j * tap..(j + 1) * tap]);
            }
        }
        let t = Tensor::new([t_len, c_out], out)?;
        Ok(self.push(t, Op::Conv1d { x, w, b, pad_left }))
    }

    /// `g · v / ‖v‖` per output channel (last axis).
    pub fn weight_norm(&mut self, v: Var, g: Var) -> Result<Var> {
        let (vv, vg) = (self.value(v), self.value(g));
        let c_out = *vv.shape().last().expect("non-empty");
        if vg.len() != c_out {
            return Err(Error::shape("weight_norm", "g must have one entry per output channel"));
        }
        let mut out = vec![0.0; vv.len()];
        kernels::weight_norm(vv.data(), vg.data(), &mut out);
        let t = Tensor::new(vv.shape().to_vec(), out)?;
        Ok(self.push(t, Op::WeightNorm { v, g }))
    }

    /// Gated linear unit: first half of the channels times the sigmoid of the
    /// second half.
    pub fn glu(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let c2 = vx.cols();
        if c2 % 2 != 0 {
            return Err(Error::OddChannels(c2));
        }
        let c = c2 / 2;
        let rows = vx.rows();
        let mut out = vec![0.0; rows * c];
        for r in 0..rows {
            kernels::glu_row(&mut out[r * c..(r + 1) * c], vx.row(r));
        }
        let t = Tensor::new([rows, c], out)?;
        Ok(self.push(t, Op::Glu(x)))
    }

    /// Multiplies by a fixed mask (already including the inverse keep scale).
    pub fn apply_mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let vx = self.value(x);
        if mask.len() != vx.len() {
            return Err(Error::shape("dropout", "mask length differs from input"));
        }
        let data = vx.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Dropout { x, mask }))
    }

    /// Adds a `[c]` bias to the first half of each `[2c]` row.
    pub fn add_to_value_half(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let c2 = vx.cols();
        if c2 != 2 * vb.len() {
            return Err(Error::shape(
                "speaker bias",
                format!("bias of {} for {c2} conv channels", vb.len()),
            ));
        }
        let c = vb.len();
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(c2) {
            for k in 0..c {
                row[k] += vb.data()[k];
            }
        }
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        Ok(self.push(t, Op::AddToValueHalf { x, bias }))
    }

    /// `(A · Bᵀ) · scale` for `A: [n × h]`, `B: [m × h]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var, scale: f64) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(Error::shape("matmul_nt", format!("{:?} · {:?}ᵀ", va.shape(), vb.shape())));
        }
        let (n, m) = (va.rows(), vb.rows());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] = kernels::dot(va.row(i), vb.row(j)) * scale;
            }
        }
        let t = Tensor::new([n, m], out)?;
        Ok(self.push(t, Op::MatMulNT { a, b, scale }))
    }

    /// `A · B` for `A: [n × m]`, `B: [m × c]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(Error::shape("matmul", format!("{:?} · {:?}", va.shape(), vb.shape())));
        }
        let (n, m, c) = (va.rows(), va.cols(), vb.cols());
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            kernels::accumulate_row(&mut out[i * c..(i + 1) * c], va.row(i), vb.data());
        }
        let _ = m;
        let t = Tensor::new([n, c], out)?;
        Ok(self.push(t, Op::MatMul { a, b }))
    }

    /// Row-wise softmax, each row restricted to its `[lo, hi)` window.
    pub fn softmax_rows(&mut self, x: Var, windows: Vec<(usize, usize)>) -> Result<Var> {
        let vx = self.value(x);
        let (n, m) = (vx.rows(), vx.cols());
        if windows.len() != n || windows.iter().any(|&(lo, hi)| lo >= hi || hi > m) {
            return Err(Error::shape("softmax_rows", "one non-empty window per row"));
        }
        let mut out = vec![0.0; n * m];
        for (i, &(lo, hi)) in windows.iter().enumerate() {
            kernels::softmax_window(vx.row(i), &mut out[i * m..(i + 1) * m], lo, hi);
        }
        let t = Tensor::new([n, m], out)?;
        Ok(self.push(t, Op::SoftmaxRows { x, windows }))
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        let (rows, dim) = (vt.rows(), vt.cols());
        if ids.is_empty() {
            return Err(Error::Empty("embedding ids"));
        }
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= rows {
                return Err(Error::SymbolOutOfRange { id, size: rows });
            }
            out.extend_from_slice(vt.row(id));
        }
        let t = Tensor::new([ids.len(), dim], out)?;
        Ok(self.push(
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// `weight · PE(rate)` for `len` timesteps and `d` channels; the scalar
    /// rate node receives a gradient.
    pub fn positional(&mut self, rate: Var, len: usize, d: usize, weight: f64) -> Result<Var> {
        let vr = self.value(rate);
        if vr.len() != 1 {
            return Err(Error::shape("positional", "rate must be a scalar"));
        }
        let r = vr.data()[0];
        let mut out = vec![0.0; len * d];
        for i in 0..len {
            for k in 0..d {
                out[i * d + k] = weight * kernels::positional_value(r, i, k, d);
            }
        }
        let t = Tensor::new([len, d], out)?;
        Ok(self.push(t, Op::Positional { rate, d, weight }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// `Σ weight_e · |pred_e − target_e|`.
    pub fn l1(&mut self, pred: Var, target: Vec<f64>, weight: Vec<f64>) -> Result<Var> {
        let vp = self.value(pred);
        if target.len() != vp.len() || weight.len() != vp.len() {
            return Err(Error::shape("l1", "target/weight length differs from prediction"));
        }
        let s = vp
            .data()
            .iter()
            .zip(&target)
            .zip(&weight)
            .map(|((p, t), w)| w * (p - t).abs())
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::L1 { pred, target, weight }))
    }

    /// `Σ weight_e · BCE(sigmoid(logit_e), target_e)` in the stable form.
    pub fn bce_with_logits(&mut self, logits: Var, target: Vec<f64>, weight: Vec<f64>) -> Result<Var> {
        let vl = self.value(logits);
        if target.len() != vl.len() || weight.len() != vl.len() {
            return Err(Error::shape("bce", "target/weight length differs from logits"));
        }
        let s = vl
            .data()
            .iter()
            .zip(&target)
            .zip(&weight)
            .map(|((&x, &y), &w)| w * bce_term(x, y))
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::Bce { logits, target, weight }))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0; self.nodes[loss.0].value.len()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads(grads)
    }

    fn backward_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let len = |v: Var| self.nodes[v.0].value.len();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_into(accumulate(&mut grads[a.0], len(*a)), g, 1.0);
                add_into(accumulate(&mut grads[b.0], len(*b)), g, 1.0);
            }
            Op::Sub(a, b) => {
                add_into(accumulate(&mut grads[a.0], len(*a)), g, 1.0);
                add_into(accumulate(&mut grads[b.0], len(*b)), g, -1.0);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                let ga = accumulate(&mut grads[a.0], va.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * vb[i];
                }
                let gb = accumulate(&mut grads[b.0], vb.len());
                for i in 0..g.len() {
                    gb[i] += g[i] * va[i];
                }
            }
            Op::Scale(a, s) => add_into(accumulate(&mut grads[a.0], len(*a)), g, *s),
            Op::Residual(a, b) => {
                add_into(accumulate(&mut grads[a.0], len(*a)), g, SQRT_HALF);
                add_into(accumulate(&mut grads[b.0], len(*b)), g, SQRT_HALF);
            }
            Op::AddRow(x, row) => {
                add_into(accumulate(&mut grads[x.0], len(*x)), g, 1.0);
                let m = len(*row);
                let gr = accumulate(&mut grads[row.0], m);
                for (i, gv) in g.iter().enumerate() {
                    gr[i % m] += gv;
                }
            }
            Op::SumAll(x) => {
                let gx = accumulate(&mut grads[x.0], len(*x));
                for v in gx.iter_mut() {
                    *v += g[0];
                }
            }
            Op::Unary(x, f) => {
                let vx = val(*x).data();
                let y = node.value.data();
                let gx = accumulate(&mut grads[x.0], vx.len());
                for i in 0..g.len() {
                    gx[i] += g[i] * f.derivative(vx[i], y[i]);
                }
            }
            Op::Linear { x, w, b } => {
                let (vx, vw) = (val(*x), val(*w));
                let (n_in, n_out) = (vw.shape()[0], vw.shape()[1]);
                let rows = vx.len() / n_in;
                {
                    let gx = accumulate(&mut grads[x.0], vx.len());
                    for r in 0..rows {
                        let gr = &g[r * n_out..(r + 1) * n_out];
                        for k in 0..n_in {
                            gx[r * n_in + k] += kernels::dot(gr, &vw.data()[k * n_out..(k + 1) * n_out]);
                        }
                    }
                }
                {
                    let gw = accumulate(&mut grads[w.0], vw.len());
                    for r in 0..rows {
                        let gr = &g[r * n_out..(r + 1) * n_out];
                        for k in 0..n_in {
                            let xv = vx.data()[r * n_in + k];
                            if xv != 0.0 {
                                add_into(&mut gw[k * n_out..(k + 1) * n_out], gr, xv);
                            }
                        }
                    }
                }
                let gb = accumulate(&mut grads[b.0], n_out);
                for r in 0..rows {
                    add_into(gb, &g[r * n_out..(r + 1) * n_out], 1.0);
                }
            }
            Op::Conv1d { x, w, b, pad_left } => {
                let (vx, vw) = (val(*x), val(*w));
                let (k, c_in, c_out) = (vw.shape()[0], vw.shape()[1], vw.shape()[2]);
                let t_len = vx.rows();
                let tap = c_in * c_out;
                let src = |t: usize, j: usize| (t + j).checked_sub(*pad_left).filter(|&s| s < t_len);
                {
                    let gx = accumulate(&mut grads[x.0], vx.len());
                    for t in 0..t_len {
                        let gt = &g[t * c_out..(t + 1) * c_out];
                        for j in 0..k {
                            if let Some(s) = src(t, j) {
                                let wj = &vw.data()[j * tap..(j + 1) * tap];
                                for i in 0..c_in {
                                    gx[s * c_in + i] += kernels::dot(gt, &wj[i * c_out..(i + 1) * c_out]);
                                }
                            }
                        }
                    }
                }
                {
                    let gw = accumulate(&mut grads[w.0], vw.len());
                    for t in 0..t_len {
                        let gt = &g[t * c_out..(t + 1) * c_out];
                        for j in 0..k {
                            if let Some(s) = src(t, j) {
                                let xs = vx.row(s);
                                for i in 0..c_in {
                                    let xv = xs[i];
                                    if xv != 0.0 {
                                        let off = j * tap + i * c_out;
                                        add_into(&mut gw[off..off + c_out], gt, xv);
                                    }
                                }
                            }
                        }
                    }
                }
                let gb = accumulate(&mut grads[b.0], c_out);
                for t in 0..t_len {
                    add_into(gb, &g[t * c_out..(t + 1) * c_out], 1.0);
                }
            }
            Op::WeightNorm { v, g: gain } => {
                let (vv, vg) = (val(*v).data(), val(*gain).data());
                let c_out = vg.len();
                let norms = kernels::channel_norms(vv, c_out);
                // Per channel: s = Σ dW · v.
                let mut s = vec![0.0; c_out];
                for (idx, (&gw, &vx)) in g.iter().zip(vv).enumerate() {
                    s[idx % c_out] += gw * vx;
                }
                {
                    let gg = accumulate(&mut grads[gain.0], c_out);
                    for ch in 0..c_out {
                        gg[ch] += s[ch] / norms[ch];
                    }
                }
                let gv = accumulate(&mut grads[v.0], vv.len());
                for (idx, (&gw, &vx)) in g.iter().zip(vv).enumerate() {
                    let ch = idx % c_out;
                    let n = norms[ch];
                    gv[idx] += vg[ch] / n * (gw - vx * s[ch] / (n * n));
                }
            }
            Op::Glu(x) => {
                let vx = val(*x);
                let c = vx.cols() / 2;
                let gx = accumulate(&mut grads[x.0], vx.len());
                for r in 0..vx.rows() {
                    let row = vx.row(r);
                    for k in 0..c {
                        let a = row[k];
                        let s = kernels::sigmoid(row[c + k]);
                        let go = g[r * c + k];
                        gx[r * 2 * c + k] += go * s;
                        gx[r * 2 * c + c + k] += go * a * s * (1.0 - s);
                    }
                }
            }
            Op::Dropout { x, mask } => {
                let gx = accumulate(&mut grads[x.0], mask.len());
                for i in 0..g.len() {
                    gx[i] += g[i] * mask[i];
                }
            }
            Op::AddToValueHalf { x, bias } => {
                add_into(accumulate(&mut grads[x.0], len(*x)), g, 1.0);
                let c = len(*bias);
                let gb = accumulate(&mut grads[bias.0], c);
                for row in g.chunks(2 * c) {
                    add_into(gb, &row[..c], 1.0);
                }
            }
            Op::MatMulNT { a, b, scale } => {
                let (va, vb) = (val(*a), val(*b));
                let (n, m, h) = (va.rows(), vb.rows(), va.cols());
                {
                    let ga = accumulate(&mut grads[a.0], va.len());
                    for i in 0..n {
                        for j in 0..m {
                            let gij = g[i * m + j] * scale;
                            if gij != 0.0 {
                                add_into(&mut ga[i * h..(i + 1) * h], vb.row(j), gij);
                            }
                        }
                    }
                }
                let gb = accumulate(&mut grads[b.0], vb.len());
                for i in 0..n {
                    for j in 0..m {
                        let gij = g[i * m + j] * scale;
                        if gij != 0.0 {
                            add_into(&mut gb[j * h..(j + 1) * h], va.row(i), gij);
                        }
                    }
                }
            }
            Op::MatMul { a, b } => {
                let (va, vb) = (val(*a), val(*b));
                let (n, m, c) = (va.rows(), va.cols(), vb.cols());
                {
                    let ga = accumulate(&mut grads[a.0], va.len());
                    for i in 0..n {
                        for s in 0..m {
                            ga[i * m + s] += kernels::dot(&g[i * c..(i + 1) * c], vb.row(s));
                        }
                    }
                }
                let gb = accumulate(&mut grads[b.0], vb.len());
                for i in 0..n {
                    for s in 0..m {
                        let av = va.row(i)[s];
                        if av != 0.0 {
                            add_into(&mut gb[s * c..(s + 1) * c], &g[i * c..(i + 1) * c], av);
                        }
                    }
                }
            }
            Op::SoftmaxRows { x, windows } => {
                let y = &node.value;
                let m = y.cols();
                let gx = accumulate(&mut grads[x.0], y.len());
                for (i, &(lo, hi)) in windows.iter().enumerate() {
                    let yr = y.row(i);
                    let gr = &g[i * m..(i + 1) * m];
                    let inner: f64 = (lo..hi).map(|j| gr[j] * yr[j]).sum();
                    for j in lo..hi {
                        gx[i * m + j] += yr[j] * (gr[j] - inner);
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let dim = val(*table).cols();
                let gt = accumulate(&mut grads[table.0], len(*table));
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut gt[id * dim..(id + 1) * dim], &g[r * dim..(r + 1) * dim], 1.0);
                }
            }
            Op::Positional { rate, d, weight } => {
                let r = val(*rate).data()[0];
                let rows = node.value.rows();
                let mut acc = 0.0;
                for i in 0..rows {
                    for k in 0..*d {
                        let angle = kernels::positional_angle(r, i, k, *d);
                        let dangle = kernels::positional_angle(1.0, i, k, *d);
                        let dval = if k % 2 == 0 { angle.cos() } else { -angle.sin() };
                        acc += g[i * d + k] * weight * dval * dangle;
                    }
                }
                accumulate(&mut grads[rate.0], 1)[0] += acc;
            }
            Op::Reshape(x) => add_into(accumulate(&mut grads[x.0], len(*x)), g, 1.0),
            Op::L1 { pred, target, weight } => {
                let vp = val(*pred).data();
                let gp = accumulate(&mut grads[pred.0], vp.len());
                for i in 0..vp.len() {
                    let diff = vp[i] - target[i];
                    let sign = if diff > 0.0 {
                        1.0
                    } else if diff < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    gp[i] += g[0] * weight[i] * sign;
                }
            }
            Op::Bce { logits, target, weight } => {
                let vl = val(*logits).data();
                let gl = accumulate(&mut grads[logits.0], vl.len());
                for i in 0..vl.len() {
                    gl[i] += g[0] * weight[i] * (kernels::sigmoid(vl[i]) - target[i]);
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64], s: f64) {
    for (d, v) in dst.iter_mut().zip(src) {
        *d += s * v;
    }
}

pub(crate) fn bce_term(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
}

/// A tape bound to a parameter store, with per-graph caches for parameter
/// leaves and effective weight-normalized weights, plus the dropout RNG.
pub struct Graph<'a> {
    tape: Tape,
    store: &'a ParamStore,
    params: HashMap<ParamId, Var>,
    weights: HashMap<ParamId, Var>,
    training: bool,
    rng: ChaCha8Rng,
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore, training: bool, seed: u64) -> Self {
        Graph {
            tape: Tape::new(),
            store,
            params: HashMap::new(),
            weights: HashMap::new(),
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id).clone());
        self.params.insert(id, v);
        v
    }

    /// Effective weight of a weight-normalized parameter, computed once per
    /// graph.
    pub fn weight(&mut self, p: WeightNormParam) -> Result<Var> {
        if let Some(&w) = self.weights.get(&p.v) {
            return Ok(w);
        }
        let v = self.param(p.v);
        let g = self.param(p.g);
        let w = self.tape.weight_norm(v, g)?;
        self.weights.insert(p.v, w);
        Ok(w)
    }

    /// Inverted dropout; identity outside training or when `keep_prob == 1`.
    pub fn dropout(&mut self, x: Var, keep_prob: f64) -> Result<Var> {
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(Error::InvalidProbability {
                name: "keep_prob",
                value: keep_prob,
            });
        }
        if !self.training || keep_prob == 1.0 {
            return Ok(x);
        }
        let n = self.tape.value(x).len();
        let mask = super::layers::dropout_mask(n, keep_prob, &mut self.rng);
        self.tape.apply_mask(x, mask)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Gradients of every bound parameter, keyed by id.
    pub fn param_grads(&self, grads: &Grads) -> Vec<(ParamId, Vec<f64>)> {
        let mut out: Vec<(ParamId, Vec<f64>)> = self
            .params
            .iter()
            .filter_map(|(&id, &v)| grads.get(v).map(|g| (id, g.to_vec())))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    pub fn random_uniform(&mut self) -> f64 {
        self.rng.random()
    }
}

impl Deref for Graph<'_> {
    type Target = Tape;
    fn deref(&self) -> &Tape {
        &self.tape
    }
}

impl DerefMut for Graph<'_> {
    fn deref_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }
}
