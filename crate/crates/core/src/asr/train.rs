use serde::{Deserialize, Serialize};

use super::model::{decoder_io, AsrModel, AsrModelConfig};
use super::{hybrid_loss, symbol_id, BLANK};
use crate::error::{Error, Result};
use crate::manifest::CorpusManifest;
use crate::nn::{ctc_loss_var, seeded_rng, sequence_loss_var, Adam, AdamConfig, Checkpoint, Ctx, LossKind, Mat, Target};
use crate::train::{apply_update, check_finite, manifest_features, shuffled, warmup_lr, Cmvn, EpochStats, TrainLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AsrTrainConfig {
    pub model: AsrModelConfig,
    pub ctc_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for AsrTrainConfig {
    fn default() -> Self {
        Self { model: AsrModelConfig::default(), ctc_weight: 0.3, epochs: 30, batch_size: 8, lr: 2e-3, warmup_steps: 100, clip_norm: 5.0, seed: 0 }
    }
}

impl AsrTrainConfig {
    pub fn validate(&self) -> Result<()> {
        hybrid_loss(0.0, 0.0, self.ctc_weight)?;
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("epochs, batch_size and lr must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) struct Example {
    input: Mat<f32>,
    labels: Vec<usize>,
}

fn examples(model: &AsrModel, manifest: &CorpusManifest, feats: &[Mat<f32>]) -> Result<Vec<Example>> {
    manifest
        .records
        .iter()
        .zip(feats)
        .map(|(r, f)| {
            let labels = r.tokens().indices().map_err(|e| Error::Invalid(format!("{}: vocabulary mismatch: {e}", r.utt_id)))?;
            Ok(Example { input: model.encoder_input(f), labels: labels.into_iter().map(symbol_id).collect() })
        })
        .collect()
}

/// Forward pass and hybrid loss for one utterance; returns the loss node
/// and its value.
fn utterance_loss(model: &AsrModel, ctx: &mut Ctx<f32>, ex: &Example, lambda: f64) -> Result<(crate::nn::Var, f64)> {
    let enc = model.encode(ctx, &ex.input)?;
    let lp = model.ctc_log_probs(ctx, enc);
    let n = ex.labels.len().max(1) as f64;
    let l_ctc = ctc_loss_var(&mut ctx.g, lp, &ex.labels, BLANK)?;
    let l_ctc = ctx.g.scale(l_ctc, 1.0 / n);
    let (input, target) = decoder_io(&ex.labels);
    let logits = model.decoder_logits(ctx, enc, &input)?;
    let mask = vec![true; target.len()];
    let l_att = sequence_loss_var(&mut ctx.g, LossKind::CrossEntropy, logits, Target::Classes(&target), &mask, 1.0)?;
    let value = hybrid_loss(ctx.g.scalar(l_ctc) as f64, ctx.g.scalar(l_att) as f64, lambda)?;
    let a = ctx.g.scale(l_ctc, lambda);
    let b = ctx.g.scale(l_att, 1.0 - lambda);
    Ok((ctx.g.add(a, b), value))
}

fn mean_loss(model: &AsrModel, data: &[Example], lambda: f64) -> Result<f64> {
    let mut total = 0.0;
    for ex in data {
        let mut ctx = Ctx::eval(&model.store);
        total += utterance_loss(model, &mut ctx, ex, lambda)?.1;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Trains on `manifest`, tracking the hybrid loss on `valid` when given.
pub fn train_asr(manifest: &CorpusManifest, valid: Option<&CorpusManifest>, cfg: &AsrTrainConfig) -> Result<(Checkpoint, TrainLog)> {
    cfg.validate()?;
    if manifest.is_empty() {
        return Err(Error::Invalid("ASR training manifest is empty".into()));
    }
    let mut model = AsrModel::new(cfg.model, cfg.seed)?;
    let feats = manifest_features(manifest, &cfg.model.features)?;
    model.cmvn = Cmvn::fit(&feats)?;
    let train = examples(&model, manifest, &feats)?;
    let valid = match valid {
        Some(v) if !v.is_empty() => Some(examples(&model, v, &manifest_features(v, &cfg.model.features)?)?),
        _ => None,
    };
    let mut rng = seeded_rng(cfg.seed.wrapping_add(1));
    let mut opt = Adam::new(&model.store, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut log = TrainLog::new("asr");
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        let order = shuffled(train.len(), &mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            for &i in batch {
                let (loss_var, loss) = {
                    let mut ctx = Ctx::train(&model.store, &mut rng);
                    let (v, loss) = utterance_loss(&model, &mut ctx, &train[i], cfg.ctc_weight)?;
                    check_finite(loss, step)?;
                    let grads = ctx.g.backward(v);
                    (grads, loss)
                };
                loss_var.accumulate_into(&mut model.store);
                total += loss;
            }
            opt.set_lr(warmup_lr(cfg.lr, opt.steps(), cfg.warmup_steps));
            apply_update(&mut model.store, &mut opt, batch.len(), cfg.clip_norm, &mut log);
            step += 1;
        }
        let valid_loss = valid.as_ref().map(|v| mean_loss(&model, v, cfg.ctc_weight)).transpose()?;
        log::info!("asr epoch {epoch}: train {:.4} valid {:?}", total / train.len() as f64, valid_loss);
        log.epochs.push(EpochStats { epoch, train_loss: total / train.len() as f64, valid_loss });
    }
    let ckpt = model.to_checkpoint(serde_json::to_string(cfg)?, cfg.seed);
    Ok((ckpt, log))
}
