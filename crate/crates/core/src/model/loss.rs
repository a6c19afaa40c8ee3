use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::{ConverterOutput, DecoderOutput};
use crate::dsp::WorldTargets;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Normalized training targets, padded to a whole number of frame groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    /// `[F × mel_bands]`, `F` a multiple of `r`.
    pub mel: Tensor,
    /// `[F × bins]`.
    pub linear: Option<Tensor>,
    pub world: Option<WorldTargets>,
    /// Frames before the padding.
    pub valid_frames: usize,
    pub reduction: usize,
}

fn pad_rows(t: &Tensor, rows: usize) -> Result<Tensor> {
    let mut data = t.data().to_vec();
    data.resize(rows * t.cols(), 0.0);
    Tensor::new([rows, t.cols()], data)
}

impl Targets {
    /// Zero-pads every stream up to a multiple of `r` frames.
    pub fn new(
        mel: &Tensor,
        linear: Option<&Tensor>,
        world: Option<&WorldTargets>,
        reduction: usize,
    ) -> Result<Self> {
        let valid = mel.rows();
        if valid == 0 || reduction == 0 {
            return Err(Error::Empty("targets"));
        }
        if linear.is_some_and(|l| l.rows() != valid) || world.is_some_and(|w| w.frames() != valid) {
            return Err(Error::shape("targets", "mel, linear and world frame counts differ"));
        }
        let padded = valid.div_ceil(reduction) * reduction;
        Self {
            mel: mel.clone(),
            linear: linear.cloned(),
            world: world.cloned(),
            valid_frames: valid,
            reduction,
        }
        .padded_to(padded)
    }

    /// Appends zero frames (masked out of every loss term).
    pub fn padded_to(mut self, frames: usize) -> Result<Self> {
        if frames % self.reduction != 0 || frames < self.mel.rows() {
            return Err(Error::shape("targets", format!("cannot pad to {frames} frames")));
        }
        self.mel = pad_rows(&self.mel, frames)?;
        if let Some(l) = &self.linear {
            self.linear = Some(pad_rows(l, frames)?);
        }
        if let Some(w) = &mut self.world {
            w.voiced.resize(frames, 0.0);
            w.log_f0.resize(frames, 0.0);
            w.envelope.resize(frames * w.envelope_bands, 0.0);
            w.aperiodicity.resize(frames * w.aperiodicity_bands, 0.0);
        }
        Ok(self)
    }

    pub fn frames(&self) -> usize {
        self.mel.rows()
    }

    pub fn steps(&self) -> usize {
        self.frames() / self.reduction
    }

    /// One entry per frame group: 1 on the group holding the last real
    /// frame, 0 before it.
    pub fn done_targets(&self) -> Vec<f64> {
        let last = (self.valid_frames - 1) / self.reduction;
        (0..self.steps()).map(|t| f64::from(u8::from(t == last))).collect()
    }

    fn frame_mask(&self, width: usize, per_frame: impl Fn(usize) -> bool) -> (Vec<f64>, usize) {
        let mut mask = vec![0.0; self.frames() * width];
        let mut count = 0;
        for t in 0..self.valid_frames {
            if per_frame(t) {
                mask[t * width..(t + 1) * width].fill(1.0);
                count += width;
            }
        }
        (mask, count)
    }
}

/// Relative weights of the loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub mel: f64,
    pub done: f64,
    pub linear: f64,
    pub voiced: f64,
    pub f0: f64,
    pub envelope: f64,
    pub aperiodicity: f64,
}

impl LossWeights {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        LossWeights {
            mel: cfg.mel_loss_weight,
            done: cfg.done_loss_weight,
            linear: cfg.linear_loss_weight,
            voiced: cfg.voiced_loss_weight,
            f0: cfg.f0_loss_weight,
            envelope: cfg.envelope_loss_weight,
            aperiodicity: cfg.aperiodicity_loss_weight,
        }
    }

    pub fn only_mel() -> Self {
        LossWeights {
            mel: 1.0,
            done: 0.0,
            linear: 0.0,
            voiced: 0.0,
            f0: 0.0,
            envelope: 0.0,
            aperiodicity: 0.0,
        }
    }
}

/// Unweighted per-term means and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mel: f64,
    pub done: f64,
    pub linear: f64,
    pub voiced: f64,
    pub f0: f64,
    pub envelope: f64,
    pub aperiodicity: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        w.mel * self.mel
            + w.done * self.done
            + w.linear * self.linear
            + w.voiced * self.voiced
            + w.f0 * self.f0
            + w.envelope * self.envelope
            + w.aperiodicity * self.aperiodicity
    }

    pub fn terms(&self) -> [(&'static str, f64); 7] {
        [
            ("mel", self.mel),
            ("done", self.done),
            ("linear", self.linear),
            ("voiced", self.voiced),
            ("f0", self.f0),
            ("envelope", self.envelope),
            ("aperiodicity", self.aperiodicity),
        ]
    }
}

fn masked_l1(g: &mut Graph, pred: Var, target: &[f64], mask: (Vec<f64>, usize)) -> Result<Option<Var>> {
    let (mut w, count) = mask;
    if count == 0 {
        return Ok(None);
    }
    let inv = 1.0 / count as f64;
    w.iter_mut().for_each(|m| *m *= inv);
    if g.value(pred).len() != target.len() {
        return Err(Error::shape(
            "loss",
            format!("prediction of {} values for {} targets", g.value(pred).len(), target.len()),
        ));
    }
    g.l1(pred, target.to_vec(), w).map(Some)
}

/// `Σ wᵢ · termᵢ`, each term a mean over unpadded entries. Terms whose
/// weight is zero are still reported but do not enter the graph.
pub fn total_loss(
    g: &mut Graph,
    dec: &DecoderOutput,
    conv: &ConverterOutput,
    targets: &Targets,
    weights: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let mut terms: Vec<(Var, f64)> = Vec::new();
    let mut report = LossBreakdown::default();
    let mel_bands = targets.mel.cols();

    if let Some(v) = masked_l1(g, dec.mel, targets.mel.data(), targets.frame_mask(mel_bands, |_| true))? {
        report.mel = g.value(v).data()[0];
        terms.push((v, weights.mel));
    }

    let done_t = targets.done_targets();
    let groups = targets.valid_frames.div_ceil(targets.reduction);
    let mut done_w = vec![0.0; done_t.len()];
    done_w[..groups].fill(1.0 / groups as f64);
    let done = g.bce_with_logits(dec.done, done_t, done_w)?;
    report.done = g.value(done).data()[0];
    terms.push((done, weights.done));

    if let (Some(pred), Some(target)) = (conv.linear, &targets.linear) {
        let mask = targets.frame_mask(target.cols(), |_| true);
        if let Some(v) = masked_l1(g, pred, target.data(), mask)? {
            report.linear = g.value(v).data()[0];
            terms.push((v, weights.linear));
        }
    }

    if let (Some(pred), Some(w)) = (conv.world, &targets.world) {
        let mut vmask = vec![0.0; targets.frames()];
        vmask[..targets.valid_frames].fill(1.0 / targets.valid_frames as f64);
        let voiced = g.bce_with_logits(pred.voiced, w.voiced.clone(), vmask)?;
        report.voiced = g.value(voiced).data()[0];
        terms.push((voiced, weights.voiced));

        let f0_mask = targets.frame_mask(1, |t| w.voiced[t] > 0.5);
        if let Some(v) = masked_l1(g, pred.log_f0, &w.log_f0, f0_mask)? {
            report.f0 = g.value(v).data()[0];
            terms.push((v, weights.f0));
        }
        let env_mask = targets.frame_mask(w.envelope_bands, |_| true);
        if let Some(v) = masked_l1(g, pred.envelope, &w.envelope, env_mask)? {
            report.envelope = g.value(v).data()[0];
            terms.push((v, weights.envelope));
        }
        let ap_mask = targets.frame_mask(w.aperiodicity_bands, |_| true);
        if let Some(v) = masked_l1(g, pred.aperiodicity, &w.aperiodicity, ap_mask)? {
            report.aperiodicity = g.value(v).data()[0];
            terms.push((v, weights.aperiodicity));
        }
    }

    let mut total: Option<Var> = None;
    for (v, w) in terms {
        if w == 0.0 {
            continue;
        }
        let scaled = g.scale(v, w);
        total = Some(match total {
            Some(t) => g.add(t, scaled)?,
            None => scaled,
        });
    }
    let total = match total {
        Some(t) => t,
        None => g.leaf(Tensor::scalar(0.0)),
    };
    report.total = g.value(total).data()[0];
    if !report.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: 0,
            detail: format!("{report:?}"),
        });
    }
    Ok((total, report))
}
