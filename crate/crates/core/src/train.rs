//! Pieces shared by every training loop: feature normalisation, logs,
//! shuffling and the accumulate-then-step update.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dsp::{logmel, resample, FeatureConfig};
use crate::error::{Error, Result};
use crate::manifest::CorpusManifest;
use crate::nn::{Adam, Mat, NamedTensor, ParamStore, Rng, StepOutcome};
use crate::Waveform;

/// Global per-dimension mean/variance normalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct Cmvn {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Cmvn {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn fit<'a>(feats: impl IntoIterator<Item = &'a Mat<f32>>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for m in feats {
            if sum.is_empty() {
                sum = vec![0.0; m.cols];
                sq = vec![0.0; m.cols];
            }
            for r in 0..m.rows {
                for (c, &v) in m.row(r).iter().enumerate() {
                    sum[c] += v as f64;
                    sq[c] += (v as f64) * (v as f64);
                }
            }
            n += m.rows;
        }
        if n == 0 {
            return Err(Error::Invalid("cannot fit normalisation on zero frames".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq.iter().zip(&mean).map(|(s, m)| ((s / n as f64 - m * m).max(0.0).sqrt().max(1e-3)) as f32).collect();
        Ok(Self { mean: mean.into_iter().map(|m| m as f32).collect(), std })
    }

    pub fn apply(&self, m: &Mat<f32>) -> Mat<f32> {
        let mut out = m.clone();
        for r in 0..out.rows {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        out
    }

    pub fn invert(&self, m: &Mat<f32>) -> Mat<f32> {
        let mut out = m.clone();
        for r in 0..out.rows {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = *v * self.std[c] + self.mean[c];
            }
        }
        out
    }

    pub fn tensors(&self, prefix: &str) -> Vec<(String, NamedTensor)> {
        vec![
            (format!("{prefix}.mean"), NamedTensor { shape: vec![1, self.mean.len()], data: self.mean.clone() }),
            (format!("{prefix}.std"), NamedTensor { shape: vec![1, self.std.len()], data: self.std.clone() }),
        ]
    }

    pub fn from_checkpoint(ckpt: &crate::nn::Checkpoint, prefix: &str) -> Result<Self> {
        Ok(Self { mean: ckpt.tensor(&format!("{prefix}.mean"))?.data.clone(), std: ckpt.tensor(&format!("{prefix}.std"))?.data.clone() })
    }
}

/// Log-mel features of a waveform, resampling to the analysis rate first.
pub fn features(w: &Waveform, cfg: &FeatureConfig) -> Result<Mat<f32>> {
    let w = if w.sample_rate == cfg.sample_rate { std::borrow::Cow::Borrowed(w) } else { std::borrow::Cow::Owned(resample(w, cfg.sample_rate)?) };
    Ok(logmel(&w, cfg)?.values)
}

pub fn manifest_features(m: &CorpusManifest, cfg: &FeatureConfig) -> Result<Vec<Mat<f32>>> {
    m.records.iter().map(|r| features(&m.load_audio(r)?, cfg)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub module: String,
    pub epochs: Vec<EpochStats>,
    pub steps: u64,
    pub skipped_steps: u64,
}

impl TrainLog {
    pub fn new(module: &str) -> Self {
        Self { module: module.to_string(), ..Self::default() }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn first_valid(&self) -> Option<f64> {
        self.epochs.first().and_then(|e| e.valid_loss)
    }

    pub fn last_valid(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.valid_loss)
    }
}

pub fn shuffled(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// Averages gradients accumulated over `count` examples, clips, and steps.
pub fn apply_update(store: &mut ParamStore<f32>, opt: &mut Adam<f32>, count: usize, clip_norm: f64, log: &mut TrainLog) {
    if count == 0 {
        return;
    }
    store.scale_grads(1.0 / count as f32);
    if clip_norm > 0.0 {
        store.clip_grad_norm(clip_norm);
    }
    match opt.step(store) {
        StepOutcome::Applied => log.steps += 1,
        StepOutcome::SkippedNonFinite => log.skipped_steps += 1,
    }
    store.zero_grads();
}

/// Linear warm-up then inverse-square-root decay, peaking at `lr`.
pub fn warmup_lr(lr: f64, step: u64, warmup: u64) -> f64 {
    if warmup == 0 {
        return lr;
    }
    let s = (step + 1) as f64;
    let w = warmup as f64;
    lr * (s / w).min((w / s).sqrt())
}

pub fn check_finite(loss: f64, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { step })
    }
}
