use rand::Rng;

use super::params::{ParamId, ParamStore, WeightNormParam};
use super::tape::{Graph, Var};
use super::Tensor;
use crate::error::{Error, Result};

/// Inverted-dropout mask: each entry is `0` with probability `1 − keep`,
/// otherwise `1 / keep`.
pub fn dropout_mask(n: usize, keep_prob: f64, rng: &mut impl Rng) -> Vec<f64> {
    let scale = 1.0 / keep_prob;
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            if u < keep_prob {
                scale
            } else {
                0.0
            }
        })
        .collect()
}

/// Weight-normalized fully connected layer over the last axis.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: WeightNormParam,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = WeightNormParam::init(store, name, &[in_dim, out_dim], scale, rng);
        let bias = store.add(format!("{name}.b"), Tensor::zeros([out_dim]));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.weight(self.weight)?;
        let b = g.param(self.bias);
        g.linear(x, w, b)
    }

    /// Effective weight `[in × out]` and bias.
    pub fn effective(&self, store: &ParamStore) -> (Vec<f64>, Vec<f64>) {
        (
            self.weight.effective(store).into_data(),
            store.get(self.bias).data().to_vec(),
        )
    }
}

/// Weight-normalized, length-preserving 1-D convolution.
#[derive(Debug, Clone, Copy)]
pub struct Conv1d {
    pub weight: WeightNormParam,
    pub bias: ParamId,
    pub width: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub causal: bool,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        c_in: usize,
        c_out: usize,
        causal: bool,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if width % 2 == 0 {
            return Err(Error::EvenKernel(width));
        }
        let weight = WeightNormParam::init(store, name, &[width, c_in, c_out], scale, rng);
        let bias = store.add(format!("{name}.b"), Tensor::zeros([c_out]));
        Ok(Conv1d {
            weight,
            bias,
            width,
            c_in,
            c_out,
            causal,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.weight(self.weight)?;
        let b = g.param(self.bias);
        g.conv1d(x, w, b, self.causal)
    }

    pub fn effective(&self, store: &ParamStore) -> (Vec<f64>, Vec<f64>) {
        (
            self.weight.effective(store).into_data(),
            store.get(self.bias).data().to_vec(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn conv_weight_delta(k: usize, c: usize, tap: usize) -> Tensor {
        let mut w = Tensor::zeros([k, c, c]);
        for ch in 0..c {
            w.data_mut()[tap * c * c + ch * c + ch] = 1.0;
        }
        w
    }

    #[test]
    fn causal_conv_pads_left() {
        // With a delta on the first tap, output t is input t − (k − 1).
        let mut tape = Tape::new();
        let x = Tensor::new([10, 1], (1..=10).map(f64::from).collect()).unwrap();
        let xv = tape.leaf(x);
        let w = tape.leaf(conv_weight_delta(5, 1, 0));
        let b = tape.leaf(Tensor::zeros([1]));
        let y = tape.conv1d(xv, w, b, true).unwrap();
        let out = tape.value(y).data();
        assert_eq!(out.len(), 10);
        assert_eq!(&out[..4], &[0.0; 4]);
        assert_eq!(out[4], 1.0);
        assert_eq!(out[9], 6.0);
    }

    #[test]
    fn identity_kernels() {
        let mut r = rng();
        let x = Tensor::randn([7, 3], 1.0, &mut r);
        for (k, tap, causal) in [(1, 0, false), (3, 1, false)] {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let w = tape.leaf(conv_weight_delta(k, 3, tap));
            let b = tape.leaf(Tensor::zeros([3]));
            let y = tape.conv1d(xv, w, b, causal).unwrap();
            assert_eq!(tape.value(y).data(), x.data());
        }
    }

    #[test]
    fn even_width_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros([4, 2]));
        let w = tape.leaf(Tensor::zeros([4, 2, 2]));
        let b = tape.leaf(Tensor::zeros([2]));
        assert!(matches!(tape.conv1d(x, w, b, true), Err(Error::EvenKernel(4))));
        let mut store = ParamStore::new();
        assert!(Conv1d::new(&mut store, "c", 2, 1, 1, false, 1.0, &mut rng()).is_err());
    }

    #[test]
    fn causal_conv_ignores_future() {
        let mut r = rng();
        let x = Tensor::randn([12, 2], 1.0, &mut r);
        let w = Tensor::randn([5, 2, 3], 1.0, &mut r);
        let run = |x: Tensor| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x);
            let wv = tape.leaf(w.clone());
            let b = tape.leaf(Tensor::zeros([3]));
            let y = tape.conv1d(xv, wv, b, true).unwrap();
            tape.value(y).clone()
        };
        let base = run(x.clone());
        for t in 0..12 {
            let mut xp = x.clone();
            xp.data_mut()[t * 2] += 1.0;
            let pert = run(xp);
            for s in 0..12 {
                let same = base.row(s) == pert.row(s);
                assert_eq!(same, s < t || s >= t + 5, "t={t} s={s}");
            }
        }
    }

    #[test]
    fn linear_matches_brute_force() {
        let mut r = rng();
        let x = Tensor::randn([3, 3], 1.0, &mut r);
        let w = Tensor::randn([3, 2], 1.0, &mut r);
        let b = Tensor::randn([2], 1.0, &mut r);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.leaf(x.clone()), tape.leaf(w.clone()), tape.leaf(b.clone()));
        let y = tape.linear(xv, wv, bv).unwrap();
        for i in 0..3 {
            for o in 0..2 {
                let mut expect = b.data()[o];
                for k in 0..3 {
                    expect += x.at(i, k) * w.at(k, o);
                }
                assert!((tape.value(y).at(i, o) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_identity_and_bias_only() {
        let mut r = rng();
        let x = Tensor::randn([4, 3], 1.0, &mut r);
        let mut eye = Tensor::zeros([3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.leaf(x.clone()), tape.leaf(eye), tape.leaf(Tensor::zeros([3])));
        let y = tape.linear(xv, wv, bv).unwrap();
        assert_eq!(tape.value(y).data(), x.data());

        let bias = Tensor::new([3], vec![0.5, -1.0, 2.0]).unwrap();
        let (wz, bb) = (tape.leaf(Tensor::zeros([3, 3])), tape.leaf(bias.clone()));
        let y = tape.linear(xv, wz, bb).unwrap();
        for i in 0..4 {
            assert_eq!(tape.value(y).row(i), bias.data());
        }
        let bad = tape.leaf(Tensor::zeros([2, 3]));
        assert!(tape.linear(xv, bad, bb).is_err());
    }

    #[test]
    fn glu_cases() {
        let mut tape = Tape::new();
        let x = Tensor::new([1, 4], vec![2.0, -4.0, 0.0, 0.0]).unwrap();
        let xv = tape.leaf(x);
        let y = tape.glu(xv).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, -2.0]);

        let big = tape.leaf(Tensor::new([1, 2], vec![3.0, 800.0]).unwrap());
        let y = tape.glu(big).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0]);

        let mut r = rng();
        let x = Tensor::randn([2, 4], 1.0, &mut r);
        let xv = tape.leaf(x.clone());
        let y = tape.glu(xv).unwrap();
        for i in 0..2 {
            for k in 0..2 {
                let expect = x.at(i, k) / (1.0 + (-x.at(i, k + 2)).exp());
                assert!((tape.value(y).at(i, k) - expect).abs() < 1e-14);
            }
        }
        let odd = tape.leaf(Tensor::zeros([2, 3]));
        assert!(matches!(tape.glu(odd), Err(Error::OddChannels(3))));
    }

    #[test]
    fn softsign_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new([3], vec![0.0, 1.0, -3.0]).unwrap());
        let y = tape.softsign(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.5, -0.75]);
    }

    #[test]
    fn dropout_modes() {
        let store = ParamStore::new();
        let x = Tensor::full([200, 200], 1.0);
        for training in [false, true] {
            let mut g = Graph::new(&store, training, 5);
            let xv = g.leaf(x.clone());
            assert_eq!(g.dropout(xv, 1.0).unwrap(), xv);
        }
        let mut g = Graph::new(&store, false, 5);
        let xv = g.leaf(x.clone());
        assert_eq!(g.dropout(xv, 0.95).unwrap(), xv);

        let mut g = Graph::new(&store, true, 5);
        let xv = g.leaf(x.clone());
        let y = g.dropout(xv, 0.5).unwrap();
        let vals = g.value(y).data();
        let survivors = vals.iter().filter(|&&v| v != 0.0).count() as f64 / vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((survivors - 0.5).abs() <= 0.02, "{survivors}");
        assert!((mean - 1.0).abs() <= 0.05, "{mean}");
        for bad in [0.0, 1.5, -0.1] {
            assert!(g.dropout(xv, bad).is_err());
        }
    }
}
