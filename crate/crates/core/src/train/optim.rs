use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments for every parameter, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Updates applied so far.
    pub step: u64,
    pub lr: f64,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        OptimizerState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            lr,
        }
    }

    /// One bias-corrected Adam update of every parameter.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::shape("adam", "one gradient per parameter expected"));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let p = store.get_mut(id).data_mut();
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            for i in 0..p.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= self.lr * mh / (vh.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }

    /// Moments as `adam.m/<param>` and `adam.v/<param>` arrays plus the
    /// learning rate as `adam.lr`.
    pub fn to_arrays(&self, store: &ParamStore) -> Result<Vec<(String, Tensor)>> {
        let mut out = Vec::with_capacity(2 * store.len() + 1);
        for (k, (_, name, t)) in store.iter().enumerate() {
            out.push((format!("adam.m/{name}"), Tensor::new(t.shape().to_vec(), self.m[k].clone())?));
            out.push((format!("adam.v/{name}"), Tensor::new(t.shape().to_vec(), self.v[k].clone())?));
        }
        out.push(("adam.lr".into(), Tensor::scalar(self.lr)));
        Ok(out)
    }

    pub fn from_arrays(store: &ParamStore, arrays: &[(String, Tensor)], step: u64) -> Result<Self> {
        let find = |name: &str| {
            arrays
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Checkpoint(format!("optimizer state lacks {name}")))
        };
        let mut state = OptimizerState::new(store, find("adam.lr")?.data()[0]);
        state.step = step;
        for (k, (_, name, t)) in store.iter().enumerate() {
            for (slot, prefix) in [(&mut state.m[k], "m"), (&mut state.v[k], "v")] {
                let saved = find(&format!("adam.{prefix}/{name}"))?;
                if saved.shape() != t.shape() {
                    return Err(Error::Checkpoint(format!("moment shape mismatch for {name}")));
                }
                slot.copy_from_slice(saved.data());
            }
        }
        Ok(state)
    }
}

/// Clamps every coordinate to `[−max_value, max_value]`, then rescales all
/// gradients together so their L2 norm is at most `max_norm`. Returns the
/// norm after clamping, before rescaling.
pub fn clip_gradients(grads: &mut [Vec<f64>], max_value: f64, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for g in grads.iter_mut().flatten() {
        *g = g.clamp(-max_value, max_value);
        sq += *g * *g;
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// Multiplies the learning rate by `rate` whenever the step count reaches
/// a multiple of `interval`. `None` disables annealing.
pub fn anneal_lr(state: &mut OptimizerState, anneal: Option<(f64, u64)>) {
    if let Some((rate, interval)) = anneal {
        if interval > 0 && state.step > 0 && state.step % interval == 0 {
            state.lr *= rate;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clipping_examples() {
        let mut g = vec![vec![1.0, -2.0], vec![0.5]];
        let before = g.clone();
        clip_gradients(&mut g, 5.0, 100.0);
        assert_eq!(g, before);

        let mut g = vec![vec![10.0]];
        clip_gradients(&mut g, 5.0, 100.0);
        assert_eq!(g, vec![vec![5.0]]);

        // 1600 entries of 5 have norm 200.
        let mut g = vec![vec![5.0; 1000], vec![-5.0; 600]];
        let norm = clip_gradients(&mut g, 5.0, 100.0);
        assert!((norm - 200.0).abs() < 1e-9);
        assert!(g.iter().flatten().all(|&x| (x.abs() - 2.5).abs() < 1e-12));
        let after: f64 = g.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        assert!((after - 100.0).abs() < 1e-9);
    }

    fn state(lr: f64) -> OptimizerState {
        OptimizerState {
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
            lr,
        }
    }

    #[test]
    fn annealing_schedule() {
        let mut s = state(5e-4);
        for _ in 0..30_000 {
            s.step += 1;
            anneal_lr(&mut s, Some((0.98, 30_000)));
        }
        assert!((s.lr - 4.9e-4).abs() < 1e-15);
        for _ in 0..30_000 {
            s.step += 1;
            anneal_lr(&mut s, Some((0.98, 30_000)));
        }
        assert!((s.lr - 5e-4 * 0.98 * 0.98).abs() < 1e-12);

        let mut s = state(1e-3);
        for _ in 0..100_000 {
            s.step += 1;
            anneal_lr(&mut s, None);
        }
        assert_eq!(s.lr, 1e-3);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap());
        let before = store.clone();
        let mut opt = OptimizerState::new(&store, 0.0);
        opt.update(&mut store, &[vec![3.0, -1.0, 2.0]]).unwrap();
        assert_eq!(store, before);
        assert_eq!(opt.step, 1);
    }

    proptest! {
        #[test]
        fn adam_steps_are_bounded(
            grads in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 4), 1..20),
            lr in 1e-5f64..1e-2,
        ) {
            let mut store = ParamStore::new();
            store.add("w", Tensor::zeros([4]));
            let mut opt = OptimizerState::new(&store, lr);
            for g in grads {
                let mut g = vec![g];
                clip_gradients(&mut g, 5.0, 100.0);
                let before = store.get(store.id("w").unwrap()).clone();
                opt.update(&mut store, &g).unwrap();
                let after = store.get(store.id("w").unwrap());
                for (a, b) in after.data().iter().zip(before.data()) {
                    prop_assert!((a - b).abs() <= lr / (1.0 - BETA1) + 1e-15);
                }
            }
        }

        #[test]
        fn clipped_gradients_respect_both_limits(
            grads in proptest::collection::vec(-1e3f64..1e3, 1..200),
            max_value in 0.1f64..10.0,
            max_norm in 0.1f64..100.0,
        ) {
            let mut g = vec![grads];
            clip_gradients(&mut g, max_value, max_norm);
            let norm: f64 = g[0].iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(norm <= max_norm * (1.0 + 1e-12));
            prop_assert!(g[0].iter().all(|x| x.abs() <= max_value));
        }
    }
}
