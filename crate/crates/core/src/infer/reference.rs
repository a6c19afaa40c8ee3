use crate::blocks::Window;
use crate::error::Result;
use crate::model::Model;
use crate::tensor::{kernels, Tensor};
use crate::textfront::SymbolSequence;

/// Outputs of the newest decoder step.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceStep {
    pub mel_group: Vec<f64>,
    pub done_logit: f64,
    pub hidden: Vec<f64>,
    /// Attention weights of each layer.
    pub weights: Vec<Vec<f64>>,
}

/// Runs the whole decoder with the autodiff graph on `history` (the
/// groups fed back so far, oldest first) and keeps only the last step.
/// `windows[l]`, when set, holds one window for every step of layer `l`.
pub fn recompute_step(
    model: &Model,
    seq: &SymbolSequence,
    history: &[Vec<f64>],
    windows: &[Option<Vec<Window>>],
) -> Result<ReferenceStep> {
    let r = model.config.reduction;
    let bands = model.config.mel_bands;
    let group = r * bands;
    let steps = history.len() + 1;
    // Targets whose shifted groups are exactly the history.
    let mut data = Vec::with_capacity(steps * group);
    for h in history {
        data.extend_from_slice(h);
    }
    data.resize(steps * group, 0.0);
    let targets = Tensor::new([steps * r, bands], data)?;

    let mut g = model.graph(false, 0);
    let cond = model.conditioning(&mut g, seq.speaker_id)?;
    let enc = model.encode(&mut g, seq, &cond)?;
    let out = model.decode_teacher_forced(&mut g, &enc, &targets, &cond, Some(windows))?;
    let last = steps - 1;
    let mel = g.value(out.mel);
    Ok(ReferenceStep {
        mel_group: mel.data()[last * group..(last + 1) * group].to_vec(),
        done_logit: g.value(out.done).data()[last],
        hidden: g.value(out.hidden).row(last).to_vec(),
        weights: out.records.iter().map(|rec| rec.weights.row(last).to_vec()).collect(),
    })
}

/// Autoregressive decode that recomputes the full history every step.
/// Quadratic in the output length; the oracle for the fused path.
pub fn reference_decode(
    model: &Model,
    seq: &SymbolSequence,
    constrained: &[bool],
    max_steps: usize,
) -> Result<Vec<ReferenceStep>> {
    let mut history: Vec<Vec<f64>> = Vec::new();
    let width = model.config.window_width;
    let mut windows: Vec<Option<Vec<Window>>> = constrained
        .iter()
        .map(|&c| c.then(Vec::new))
        .collect();
    let mut positions = vec![0; constrained.len()];
    let mut out = Vec::new();
    for _ in 0..max_steps {
        for (ws, &last) in windows.iter_mut().zip(&positions) {
            if let Some(ws) = ws {
                ws.push(Window { last, width });
            }
        }
        let step = recompute_step(model, seq, &history, &windows)?;
        for (p, w) in positions.iter_mut().zip(&step.weights) {
            *p = kernels::argmax(w);
        }
        let done = kernels::sigmoid(step.done_logit) > model.config.done_threshold;
        history.push(step.mel_group.clone());
        out.push(step);
        if done {
            break;
        }
    }
    Ok(out)
}
