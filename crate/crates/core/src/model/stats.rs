use serde::{Deserialize, Serialize};

use crate::dsp::Features;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const STD_FLOOR: f64 = 1e-3;

/// Per-channel normalization of targets plus the dataset position rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub mel_mean: Vec<f64>,
    pub mel_std: Vec<f64>,
    pub linear_mean: Vec<f64>,
    pub linear_std: Vec<f64>,
    /// Decoder steps per input symbol.
    pub dataset_ratio: f64,
}

fn column_stats(tensors: impl Iterator<Item = Tensor>, cols: usize) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0; cols];
    let mut sq = vec![0.0; cols];
    let mut n = 0usize;
    for t in tensors {
        for r in 0..t.rows() {
            for (k, v) in t.row(r).iter().enumerate() {
                sum[k] += v;
                sq[k] += v * v;
            }
        }
        n += t.rows();
    }
    let n = n.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(STD_FLOOR))
        .collect();
    (mean, std)
}

impl CorpusStats {
    pub fn compute(features: &[Features], dataset_ratio: f64) -> Result<Self> {
        let first = features.first().ok_or(Error::Empty("corpus features"))?;
        let (mel_mean, mel_std) =
            column_stats(features.iter().map(|f| f.mel.clone()), first.mel.cols());
        let (linear_mean, linear_std) =
            column_stats(features.iter().map(|f| f.linear.clone()), first.linear.cols());
        Ok(CorpusStats {
            mel_mean,
            mel_std,
            linear_mean,
            linear_std,
            dataset_ratio,
        })
    }

    /// Zero mean, unit scale: leaves values unchanged.
    pub fn identity(mel_bands: usize, bins: usize, dataset_ratio: f64) -> Self {
        CorpusStats {
            mel_mean: vec![0.0; mel_bands],
            mel_std: vec![1.0; mel_bands],
            linear_mean: vec![0.0; bins],
            linear_std: vec![1.0; bins],
            dataset_ratio,
        }
    }

    pub fn normalize_mel(&self, mel: &Tensor) -> Result<Tensor> {
        apply(mel, &self.mel_mean, &self.mel_std, false)
    }

    pub fn normalize_linear(&self, linear: &Tensor) -> Result<Tensor> {
        apply(linear, &self.linear_mean, &self.linear_std, false)
    }

    pub fn denormalize_mel(&self, mel: &Tensor) -> Result<Tensor> {
        apply(mel, &self.mel_mean, &self.mel_std, true)
    }

    pub fn denormalize_linear(&self, linear: &Tensor) -> Result<Tensor> {
        apply(linear, &self.linear_mean, &self.linear_std, true)
    }
}

fn apply(t: &Tensor, mean: &[f64], std: &[f64], inverse: bool) -> Result<Tensor> {
    if t.cols() != mean.len() {
        return Err(Error::shape(
            "normalize",
            format!("{} columns for {} statistics", t.cols(), mean.len()),
        ));
    }
    let cols = mean.len();
    let data = t
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let k = i % cols;
            if inverse {
                v * std[k] + mean[k]
            } else {
                (v - mean[k]) / std[k]
            }
        })
        .collect();
    Tensor::new(t.shape().to_vec(), data)
}
