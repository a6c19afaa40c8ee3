use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Conv1d, Graph, Linear, ParamStore, Var};

/// Initial magnitude `g` of every conv-block filter. With unit-variance
/// inputs the GLU output then has roughly unit variance, and the residual
/// merge keeps the block output near unit variance too.
pub const CONV_GAIN: f64 = 1.75;

/// `(x + GLU(conv(dropout(x)) ⊕ speaker_bias)) · √0.5`.
#[derive(Debug, Clone, Copy)]
pub struct ConvBlock {
    pub conv: Conv1d,
    /// Speaker embedding → `c` channels, softsigned and added to the value
    /// half of the conv output.
    pub speaker: Option<Linear>,
    pub keep_prob: f64,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        width: usize,
        causal: bool,
        speaker_dim: Option<usize>,
        keep_prob: f64,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let conv = Conv1d::new(
            store,
            &format!("{name}.conv"),
            width,
            channels,
            2 * channels,
            causal,
            gain,
            rng,
        )?;
        let speaker = speaker_dim
            .map(|s| Linear::new(store, &format!("{name}.speaker"), s, channels, 1.0, rng));
        Ok(ConvBlock {
            conv,
            speaker,
            keep_prob,
        })
    }

    pub fn channels(&self) -> usize {
        self.conv.c_in
    }

    pub fn forward(&self, g: &mut Graph, x: Var, speaker: Option<Var>) -> Result<Var> {
        let dropped = g.dropout(x, self.keep_prob)?;
        let mut h = self.conv.forward(g, dropped)?;
        match (self.speaker, speaker) {
            (Some(proj), Some(s)) => {
                let b = proj.forward(g, s)?;
                let b = g.softsign(b);
                h = g.add_to_value_half(h, b)?;
            }
            (None, Some(_)) => return Err(Error::UnexpectedSpeaker),
            (Some(_), None) => return Err(Error::MissingSpeaker),
            (None, None) => {}
        }
        let gated = g.glu(h)?;
        g.residual(x, gated)
    }
}
