use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{kernels, Graph, Linear, ParamStore, Tensor, Var};

/// Inference-time monotonic window width.
pub const WINDOW_WIDTH: usize = 3;

/// Softmax restricted to `[last, last + width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub last: usize,
    pub width: usize,
}

impl Window {
    pub fn new(last: usize) -> Self {
        Window {
            last,
            width: WINDOW_WIDTH,
        }
    }

    /// `[lo, hi)` within `t_enc` keys and whether the window had to be
    /// clamped onto the final key.
    pub fn bounds(&self, t_enc: usize) -> ((usize, usize), bool) {
        if self.last >= t_enc {
            ((t_enc - 1, t_enc), true)
        } else {
            let hi = (self.last + self.width.max(1)).min(t_enc);
            ((self.last, hi), false)
        }
    }
}

/// Post-softmax attention weights for one attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    /// `[T_dec × T_enc]`.
    pub weights: Tensor,
    pub argmax_path: Vec<usize>,
    /// Set when a requested window started past the final key.
    pub clamped: bool,
}

impl AttentionRecord {
    pub fn from_weights(weights: Tensor, clamped: bool) -> Self {
        let argmax_path = (0..weights.rows()).map(|i| kernels::argmax(weights.row(i))).collect();
        AttentionRecord {
            weights,
            argmax_path,
            clamped,
        }
    }

    pub fn steps(&self) -> usize {
        self.weights.rows()
    }

    /// One row per decoder step: the step index, `T_enc` weights and the
    /// argmax index.
    pub fn to_csv(&self) -> String {
        let t_enc = self.weights.cols();
        let mut s = String::from("step");
        for j in 0..t_enc {
            let _ = write!(s, ",w{j}");
        }
        s.push_str(",argmax\n");
        for (i, &a) in self.argmax_path.iter().enumerate() {
            let _ = write!(s, "{i}");
            for w in self.weights.row(i) {
                let _ = write!(s, ",{w}");
            }
            let _ = writeln!(s, ",{a}");
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Dot-product attention over encoder keys with positional encodings added
/// to both sides before projection.
#[derive(Debug, Clone, Copy)]
pub struct AttentionBlock {
    pub query: Linear,
    pub key: Linear,
    /// Context (value width) back to the query width.
    pub out: Linear,
    pub hidden: usize,
    pub keep_prob: f64,
}

impl AttentionBlock {
    /// When the query and key widths match, the key projection starts as an
    /// exact copy of the query projection.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        query_dim: usize,
        key_dim: usize,
        hidden: usize,
        keep_prob: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let query = Linear::new(store, &format!("{name}.query"), query_dim, hidden, 1.0, rng);
        let key = Linear::new(store, &format!("{name}.key"), key_dim, hidden, 1.0, rng);
        if query_dim == key_dim {
            for (from, to) in [
                (query.weight.v, key.weight.v),
                (query.weight.g, key.weight.g),
                (query.bias, key.bias),
            ] {
                let t = store.get(from).clone();
                *store.get_mut(to) = t;
            }
        }
        let out = Linear::new(store, &format!("{name}.out"), key_dim, query_dim, 1.0, rng);
        AttentionBlock {
            query,
            key,
            out,
            hidden,
            keep_prob,
        }
    }

    /// Projected keys `[T_enc × hidden]` with their positional encoding.
    pub fn project_keys(
        &self,
        g: &mut Graph,
        keys: Var,
        key_rate: Var,
        position_weight: f64,
    ) -> Result<Var> {
        let (t_enc, e) = (g.value(keys).rows(), g.value(keys).cols());
        let pe = g.positional(key_rate, t_enc, e, position_weight)?;
        let k = g.add(keys, pe)?;
        self.key.forward(g, k)
    }

    /// Returns the output-projected, length-normalized context and the
    /// attention record.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        query: Var,
        keys: Var,
        values: Var,
        key_rate: Var,
        query_rate: Var,
        position_weight: f64,
        windows: Option<&[Window]>,
    ) -> Result<(Var, AttentionRecord)> {
        if windows.is_some() && g.training() {
            return Err(Error::WindowInTraining);
        }
        let k = self.project_keys(g, keys, key_rate, position_weight)?;
        let (t_dec, c) = (g.value(query).rows(), g.value(query).cols());
        let t_enc = g.value(values).rows();
        let pe = g.positional(query_rate, t_dec, c, position_weight)?;
        let q = g.add(query, pe)?;
        let q = self.query.forward(g, q)?;
        let logits = g.matmul_nt(q, k, 1.0 / (self.hidden as f64).sqrt())?;
        let mut clamped = false;
        let bounds = match windows {
            Some(ws) if ws.len() == 1 || ws.len() == t_dec => (0..t_dec)
                .map(|i| {
                    let (b, c) = ws[if ws.len() == 1 { 0 } else { i }].bounds(t_enc);
                    clamped |= c;
                    b
                })
                .collect(),
            Some(ws) => {
                return Err(Error::shape(
                    "attention windows",
                    format!("{} windows for {t_dec} steps", ws.len()),
                ))
            }
            None => vec![(0, t_enc); t_dec],
        };
        let weights = g.softmax_rows(logits, bounds)?;
        let record = AttentionRecord::from_weights(g.value(weights).clone(), clamped);
        let dropped = g.dropout(weights, self.keep_prob)?;
        let ctx = g.matmul(dropped, values)?;
        let ctx = g.scale(ctx, (t_enc as f64).sqrt());
        let out = self.out.forward(g, ctx)?;
        Ok((out, record))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(c: usize) -> (ParamStore, AttentionBlock) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let block = AttentionBlock::new(&mut store, "att", c, c, 6, 1.0, &mut rng);
        (store, block)
    }

    fn run(
        store: &ParamStore,
        block: &AttentionBlock,
        q: &Tensor,
        k: &Tensor,
        window: Option<&[Window]>,
    ) -> (Tensor, AttentionRecord) {
        let mut g = Graph::new(store, false, 0);
        let (qv, kv) = (g.leaf(q.clone()), g.leaf(k.clone()));
        let one = g.leaf(Tensor::scalar(1.0));
        let (out, rec) = block.forward(&mut g, qv, kv, kv, one, one, 0.0, window).unwrap();
        (g.value(out).clone(), rec)
    }

    #[test]
    fn projections_start_equal() {
        let (store, block) = setup(4);
        assert_eq!(store.get(block.query.weight.v), store.get(block.key.weight.v));
        assert_eq!(store.get(block.query.weight.g), store.get(block.key.weight.g));
    }

    #[test]
    fn equal_keys_give_uniform_weights() {
        let (store, block) = setup(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let key_row = Tensor::randn([4], 1.0, &mut rng).into_data();
        let keys = Tensor::from_rows(&vec![key_row; 7]).unwrap();
        let q = Tensor::randn([1, 4], 1.0, &mut rng);
        let (_, rec) = run(&store, &block, &q, &keys, None);
        for w in rec.weights.row(0) {
            assert!((w - 1.0 / 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn window_masks_outside_keys() {
        let (store, block) = setup(4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let keys = Tensor::randn([10, 4], 1.0, &mut rng);
        let q = Tensor::randn([3, 4], 1.0, &mut rng);
        let (_, rec) = run(&store, &block, &q, &keys, Some(&[Window::new(2)]));
        for i in 0..3 {
            for (j, w) in rec.weights.row(i).iter().enumerate() {
                if !(2..5).contains(&j) {
                    assert_eq!(*w, 0.0);
                }
            }
            let s: f64 = rec.weights.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!((2..5).contains(&rec.argmax_path[i]));
        }
    }

    #[test]
    fn full_window_equals_unwindowed() {
        let (store, block) = setup(4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let keys = Tensor::randn([6, 4], 1.0, &mut rng);
        let q = Tensor::randn([2, 4], 1.0, &mut rng);
        let full = Window { last: 0, width: 6 };
        let (a, ra) = run(&store, &block, &q, &keys, None);
        let (b, rb) = run(&store, &block, &q, &keys, Some(&[full]));
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn past_the_end_clamps() {
        let (store, block) = setup(4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let keys = Tensor::randn([5, 4], 1.0, &mut rng);
        let q = Tensor::randn([1, 4], 1.0, &mut rng);
        let (_, rec) = run(&store, &block, &q, &keys, Some(&[Window::new(9)]));
        assert!(rec.clamped);
        assert_eq!(rec.weights.row(0)[4], 1.0);
        assert_eq!(rec.argmax_path, vec![4]);
    }

    #[test]
    fn window_rejected_in_training() {
        let (store, block) = setup(2);
        let mut g = Graph::new(&store, true, 0);
        let x = g.leaf(Tensor::zeros([2, 2]));
        let one = g.leaf(Tensor::scalar(1.0));
        let r = block.forward(&mut g, x, x, x, one, one, 1.0, Some(&[Window::new(0)]));
        assert!(matches!(r, Err(Error::WindowInTraining)));
    }

    #[test]
    fn csv_has_one_row_per_step() {
        let w = Tensor::from_rows(&[vec![0.25, 0.75], vec![1.0, 0.0]]).unwrap();
        let rec = AttentionRecord::from_weights(w, false);
        assert_eq!(rec.argmax_path, vec![1, 0]);
        let csv = rec.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,w0,w1,argmax");
        assert_eq!(lines[1], "0,0.25,0.75,1");
        assert_eq!(lines.len(), 3);
    }
}
