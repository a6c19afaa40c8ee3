use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Graph, Var};
use crate::error::{Error, Result};

/// Coordinates above this count are checked on a random subset.
const FULL_CHECK_LIMIT: usize = 10_000;
/// Denominator floor for relative errors of near-zero gradients: central
/// differences at ε = 1e-5 carry roundoff near 1e-10, so exact zeros must
/// not be divided by much less than this.
const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates where the one-sided differences disagree, i.e. the
    /// function has a kink (ReLU, |·|) within `epsilon`.
    pub skipped_kinks: usize,
    pub worst: Option<(String, usize, f64, f64)>,
}

fn loss_value(
    store: &ParamStore,
    training: bool,
    seed: u64,
    f: &mut impl FnMut(&mut Graph) -> Result<Var>,
) -> Result<f64> {
    let mut g = Graph::new(store, training, seed);
    let loss = f(&mut g)?;
    let v = g.value(loss);
    if v.len() != 1 {
        return Err(Error::shape("grad_check", "loss must be a scalar"));
    }
    Ok(v.data()[0])
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central finite differences, coordinate by coordinate.
pub fn grad_check(
    store: &ParamStore,
    training: bool,
    seed: u64,
    epsilon: f64,
    mut f: impl FnMut(&mut Graph) -> Result<Var>,
) -> Result<GradCheckReport> {
    let analytic: Vec<(ParamId, Vec<f64>)> = {
        let mut g = Graph::new(store, training, seed);
        let loss = f(&mut g)?;
        let grads = g.backward(loss);
        g.param_grads(&grads)
    };

    let mut coords: Vec<(ParamId, usize)> = store
        .ids()
        .flat_map(|id| (0..store.get(id).len()).map(move |i| (id, i)))
        .collect();
    if coords.len() > FULL_CHECK_LIMIT {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
        let picked = sample(&mut rng, coords.len(), FULL_CHECK_LIMIT);
        let mut idx: Vec<usize> = picked.into_iter().collect();
        idx.sort_unstable();
        coords = idx.into_iter().map(|i| coords[i]).collect();
    }

    let center = loss_value(store, training, seed, &mut f)?;
    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        worst: None,
    };
    for (id, i) in coords {
        let a = analytic
            .iter()
            .find(|(pid, _)| *pid == id)
            .map_or(0.0, |(_, g)| g[i]);
        let orig = work.get(id).data()[i];
        work.get_mut(id).data_mut()[i] = orig + epsilon;
        let plus = loss_value(&work, training, seed, &mut f)?;
        work.get_mut(id).data_mut()[i] = orig - epsilon;
        let minus = loss_value(&work, training, seed, &mut f)?;
        work.get_mut(id).data_mut()[i] = orig;

        let numeric = (plus - minus) / (2.0 * epsilon);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        // A slope jump inside [x − ε, x + ε] shows up as disagreeing
        // one-sided differences; the derivative is undefined there.
        let forward = (plus - center) / epsilon;
        let backward = (center - minus) / epsilon;
        let slope_scale = forward.abs().max(backward.abs()).max(REL_FLOOR);
        if rel > 1e-6 && (forward - backward).abs() > 0.1 * slope_scale {
            report.skipped_kinks += 1;
            continue;
        }
        report.checked += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some((store.name(id).to_string(), i, a, numeric));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn square_at_three() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(3.0));
        let report = grad_check(&store, false, 0, 1e-5, |g| {
            let v = g.param(x);
            let sq = g.mul(v, v)?;
            Ok(g.sum_all(sq))
        })
        .unwrap();
        assert_eq!(report.checked, 1);
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }
}
