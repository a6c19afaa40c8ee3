use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::data::{Dataset, Example};
use super::optim::{anneal_lr, clip_gradients, OptimizerState};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, save_checkpoint, LossBreakdown, Model};
use crate::textfront::PhonemeDict;

/// Stream ids separating the per-step and per-epoch random draws.
const STEP_STREAM: u64 = 1;
const EPOCH_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// 1-based index of the update just applied.
    pub step: u64,
    /// Mean over the batch.
    pub loss: LossBreakdown,
    /// Learning rate used by this update.
    pub lr: f64,
    /// Gradient norm after value clipping, before norm rescaling.
    pub grad_norm: f64,
}

fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STEP_STREAM + step);
    rng
}

/// Forward, loss, backward, clipping and one Adam update over a batch.
/// Dropout masks and phoneme substitutions are drawn from `seed`, so the
/// result depends only on its inputs.
pub fn train_step(
    model: &mut Model,
    batch: &[&Example],
    opt: &mut OptimizerState,
    dict: Option<&PhonemeDict>,
    seed: u64,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let step = opt.step + 1;
    let mut rng = step_rng(seed, step);
    let mut grads: Vec<Vec<f64>> = model.store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
    let mut mean = LossBreakdown::default();
    let inv = 1.0 / batch.len() as f64;
    for ex in batch {
        let graph_seed: u64 = rng.random();
        let phoneme_seed: u64 = rng.random();
        let seq = ex.sequence(&model.vocab, dict, model.config.phoneme_prob, phoneme_seed)?;
        let mut g = model.graph(true, graph_seed);
        let (loss, report) = model.loss(&mut g, &seq, &ex.targets).map_err(|e| match e {
            Error::NonFiniteLoss { detail, .. } => Error::NonFiniteLoss {
                step,
                detail: format!("{}: {detail}", ex.id),
            },
            e => e,
        })?;
        let back = g.backward(loss);
        for (id, gr) in g.param_grads(&back) {
            for (acc, v) in grads[id.index()].iter_mut().zip(&gr) {
                *acc += v * inv;
            }
        }
        for (slot, (_, v)) in mean_terms(&mut mean).into_iter().zip(report.terms()) {
            *slot += v * inv;
        }
        mean.total += report.total * inv;
    }
    if grads.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss {
            step,
            detail: "non-finite gradient".into(),
        });
    }
    let grad_norm = clip_gradients(&mut grads, model.config.clip_value, model.config.max_grad_norm);
    let lr = opt.lr;
    opt.update(&mut model.store, &grads)?;
    anneal_lr(opt, model.config.anneal);
    Ok(StepReport {
        step,
        loss: mean,
        lr,
        grad_norm,
    })
}

fn mean_terms(b: &mut LossBreakdown) -> [&mut f64; 7] {
    [
        &mut b.mel,
        &mut b.done,
        &mut b.linear,
        &mut b.voiced,
        &mut b.f0,
        &mut b.envelope,
        &mut b.aperiodicity,
    ]
}

/// Append-only CSV of per-step losses.
pub struct MetricsLog {
    file: File,
    start: Instant,
}

pub const METRICS_HEADER: &str =
    "step,mel,done,linear,voiced,f0,envelope,aperiodicity,total,lr,grad_norm,wall_seconds";

impl MetricsLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let fresh = !path.exists();
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        if fresh {
            writeln!(file, "{METRICS_HEADER}").map_err(|e| Error::io(path, e))?;
        }
        Ok(MetricsLog {
            file,
            start: Instant::now(),
        })
    }

    pub fn record(&mut self, r: &StepReport) -> Result<()> {
        let l = &r.loss;
        writeln!(
            self.file,
            "{},{},{},{},{},{},{},{},{},{},{},{:.3}",
            r.step,
            l.mel,
            l.done,
            l.linear,
            l.voiced,
            l.f0,
            l.envelope,
            l.aperiodicity,
            l.total,
            r.lr,
            r.grad_norm,
            self.start.elapsed().as_secs_f64()
        )
        .map_err(|e| Error::io("metrics log", e))
    }
}

/// A model, its optimizer and the data it trains on.
pub struct Trainer {
    pub model: Model,
    pub opt: OptimizerState,
    pub data: Dataset,
    pub dict: Option<PhonemeDict>,
    pub seed: u64,
    buckets: Vec<Vec<usize>>,
}

impl Trainer {
    pub fn new(model: Model, data: Dataset, seed: u64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let opt = OptimizerState::new(&model.store, model.config.learning_rate);
        let buckets = data.length_buckets(model.config.batch_size);
        Ok(Trainer {
            model,
            opt,
            data,
            dict: None,
            seed,
            buckets,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.opt.step
    }

    /// Batch for update `step` (0-based): length buckets visited in an
    /// order reshuffled every epoch.
    pub fn batch_indices(&self, step: u64) -> &[usize] {
        let n = self.buckets.len() as u64;
        let epoch = step / n;
        let mut order: Vec<usize> = (0..self.buckets.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(EPOCH_STREAM + epoch);
        order.shuffle(&mut rng);
        &self.buckets[order[(step % n) as usize]]
    }

    pub fn step(&mut self) -> Result<StepReport> {
        let idx = self.batch_indices(self.opt.step).to_vec();
        let batch: Vec<&Example> = idx.iter().map(|&i| &self.data.examples[i]).collect();
        train_step(&mut self.model, &batch, &mut self.opt, self.dict.as_ref(), self.seed)
    }

    /// Runs `steps` updates, logging each and checkpointing every
    /// `checkpoint_interval` steps and at the end. A failing step leaves
    /// the last checkpoint untouched.
    pub fn run(
        &mut self,
        steps: u64,
        mut metrics: Option<&mut MetricsLog>,
        checkpoint: Option<&Path>,
    ) -> Result<Vec<StepReport>> {
        let mut reports = Vec::with_capacity(steps as usize);
        let interval = self.model.config.checkpoint_interval.max(1);
        for _ in 0..steps {
            let r = self.step()?;
            if let Some(m) = metrics.as_deref_mut() {
                m.record(&r)?;
            }
            reports.push(r);
            if let Some(path) = checkpoint {
                if r.step % interval == 0 {
                    self.save(path)?;
                }
            }
        }
        if let Some(path) = checkpoint {
            self.save(path)?;
        }
        Ok(reports)
    }

    /// Parameters, optimizer moments, step and seed; written to a
    /// temporary file and renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tmp = PathBuf::from(path);
        tmp.as_mut_os_string().push(".tmp");
        let extra = self.opt.to_arrays(&self.model.store)?;
        let meta = json!({"step": self.opt.step, "seed": self.seed});
        save_checkpoint(&tmp, &self.model, &extra, meta)?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// Continues from a checkpoint written by [`Trainer::save`].
    pub fn resume(path: &Path, data: Dataset) -> Result<Self> {
        let (model, rest) = load_checkpoint(path)?;
        let step = rest.meta["step"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no training step".into()))?;
        let seed = rest.meta["seed"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no seed".into()))?;
        let opt = OptimizerState::from_arrays(&model.store, &rest.arrays, step)?;
        let buckets = data.length_buckets(model.config.batch_size);
        Ok(Trainer {
            model,
            opt,
            data,
            dict: None,
            seed,
            buckets,
        })
    }
}
