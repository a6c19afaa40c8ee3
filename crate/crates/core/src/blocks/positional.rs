use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{kernels, Graph, Linear, ParamStore, Tensor, Var};

/// `[len × d]` table: `sin(rate·i / 10000^(k/d))` on even channels `k`,
/// `cos(…)` on odd ones.
pub fn positional_encoding(len: usize, d: usize, rate: f64) -> Result<Tensor> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::Config(format!("positional channels must be even, got {d}")));
    }
    if rate <= 0.0 || !rate.is_finite() {
        return Err(Error::NonPositiveRate(rate));
    }
    let mut data = Vec::with_capacity(len * d);
    for i in 0..len {
        for k in 0..d {
            data.push(kernels::positional_value(rate, i, k, d));
        }
    }
    Tensor::new([len, d], data)
}

pub fn inverse_softplus(y: f64) -> f64 {
    // log(e^y − 1), stable for large y.
    y + (-(-y).exp_m1()).ln()
}

/// Learned per-speaker position rates: one softplus scalar head per side.
#[derive(Debug, Clone, Copy)]
pub struct RateHeads {
    pub key: Linear,
    pub query: Linear,
}

impl RateHeads {
    /// Biases start so a zero embedding yields exactly `(ratio, 1)`; the
    /// weights start small so random embeddings stay close to it.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        speaker_dim: usize,
        dataset_ratio: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dataset_ratio <= 0.0 || !dataset_ratio.is_finite() {
            return Err(Error::NonPositiveRate(dataset_ratio));
        }
        let key = Linear::new(store, &format!("{name}.key"), speaker_dim, 1, 0.05, rng);
        let query = Linear::new(store, &format!("{name}.query"), speaker_dim, 1, 0.05, rng);
        store.get_mut(key.bias).data_mut()[0] = inverse_softplus(dataset_ratio);
        store.get_mut(query.bias).data_mut()[0] = inverse_softplus(1.0);
        Ok(RateHeads { key, query })
    }

    /// `(ω_key, ω_query)` as scalar graph nodes.
    pub fn forward(&self, g: &mut Graph, speaker: Var) -> Result<(Var, Var)> {
        let k = self.key.forward(g, speaker)?;
        let q = self.query.forward(g, speaker)?;
        Ok((g.softplus(k), g.softplus(q)))
    }

    pub fn evaluate(&self, store: &ParamStore, speaker: &[f64]) -> (f64, f64) {
        let head = |l: &Linear| {
            let (w, b) = l.effective(store);
            let mut out = [0.0];
            kernels::affine_row(&mut out, speaker, &w, &b);
            kernels::softplus(out[0])
        };
        (head(&self.key), head(&self.query))
    }
}

/// Which rates a model uses.
#[derive(Debug, Clone, Copy)]
pub enum SpeakerRates<'a> {
    Single,
    Multi {
        heads: &'a RateHeads,
        store: &'a ParamStore,
        embedding: &'a [f64],
    },
}

/// `(ω_key, ω_query)`: fixed `(ratio, 1)` for one speaker, learned heads
/// otherwise.
pub fn position_rates(dataset_ratio: f64, mode: SpeakerRates) -> Result<(f64, f64)> {
    if dataset_ratio <= 0.0 || !dataset_ratio.is_finite() {
        return Err(Error::NonPositiveRate(dataset_ratio));
    }
    Ok(match mode {
        SpeakerRates::Single => (dataset_ratio, 1.0),
        SpeakerRates::Multi {
            heads,
            store,
            embedding,
        } => heads.evaluate(store, embedding),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_row_is_sin_cos_of_zero() {
        let pe = positional_encoding(3, 6, 2.0).unwrap();
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn channel_zero_at_pi() {
        let pe = positional_encoding(4, 2, 1.0).unwrap();
        // i = π is not an integer timestep; evaluate the kernel directly.
        let v = (std::f64::consts::PI / 10000f64.powf(0.0)).sin();
        assert!(v.abs() < 1e-12);
        assert!(pe.data().iter().all(|x| x.abs() <= 1.0));
    }

    fn first_return_to_zero(rate: f64) -> usize {
        // Channel 0 is sin(rate·i); find the sign change after i = 0.
        let pe = positional_encoding(400, 2, rate).unwrap();
        (2..400)
            .find(|&i| pe.at(i - 1, 0) > 0.0 && pe.at(i, 0) <= 0.0)
            .expect("zero crossing")
    }

    #[test]
    fn doubling_rate_halves_first_crossing() {
        let slow = first_return_to_zero(0.05);
        let fast = first_return_to_zero(0.1);
        // π / 0.05 ≈ 62.8 and π / 0.1 ≈ 31.4.
        assert_eq!(slow, 63);
        assert_eq!(fast, 32);
    }

    #[test]
    fn rates_enter_the_table() {
        let a = positional_encoding(5, 4, 1.0).unwrap();
        let b = positional_encoding(5, 4, 1.3).unwrap();
        assert_eq!(a.row(0), b.row(0));
        assert!((1..5).any(|i| a.row(i) != b.row(i)));
        assert!(positional_encoding(5, 3, 1.0).is_err());
        assert!(positional_encoding(5, 4, 0.0).is_err());
    }

    #[test]
    fn single_speaker_rates() {
        assert_eq!(position_rates(6.3, SpeakerRates::Single).unwrap(), (6.3, 1.0));
        assert_eq!(position_rates(1.0, SpeakerRates::Single).unwrap(), (1.0, 1.0));
        assert!(matches!(
            position_rates(-1.0, SpeakerRates::Single),
            Err(Error::NonPositiveRate(_))
        ));
    }

    #[test]
    fn softplus_inverse_round_trips() {
        for y in [0.01, 1.0, 4.0, 6.3, 40.0] {
            assert!((kernels::softplus(inverse_softplus(y)) - y).abs() < 1e-12 * y.max(1.0));
        }
    }

    #[test]
    fn learned_heads_start_at_dataset_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let heads = RateHeads::new(&mut store, "rate", 16, 6.3, &mut rng).unwrap();
        let n = 2000;
        let (mut key_sum, mut query_sum) = (0.0, 0.0);
        for _ in 0..n {
            let s = Tensor::randn([16], 1.0, &mut rng);
            let mode = SpeakerRates::Multi {
                heads: &heads,
                store: &store,
                embedding: s.data(),
            };
            let (k, q) = position_rates(6.3, mode).unwrap();
            key_sum += k;
            query_sum += q;
        }
        assert!((key_sum / n as f64 / 6.3 - 1.0).abs() < 0.1);
        assert!((query_sum / n as f64 - 1.0).abs() < 0.1);
    }
}
