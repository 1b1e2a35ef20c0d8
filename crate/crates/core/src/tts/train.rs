use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{guided_attention_weights, shifted_frames, TtsModel, TtsModelConfig};
use crate::error::{Error, Result};
use crate::manifest::CorpusManifest;
use crate::nn::{seeded_rng, Rng, sequence_loss, sequence_loss_var, Adam, AdamConfig, Checkpoint, Ctx, LossKind, Mat, Target, Var};
use crate::spkemb::{extract_speaker_embedding, SpeakerEmbedding, SpkembModel};
use crate::train::{apply_update, check_finite, manifest_features, shuffled, warmup_lr, Cmvn, EpochStats, TrainLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TtsTrainConfig {
    pub model: TtsModelConfig,
    pub stop_weight: f64,
    /// Positive-class weight of the stop BCE (one positive frame per utterance).
    pub stop_pos_weight: f64,
    pub guided_attention_weight: f64,
    pub guided_attention_sigma: f64,
    pub epochs: usize,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub finetune_lr_scale: f64,
    pub warmup_steps: u64,
    pub clip_norm: f64,
    pub seed: u64,
    pub freeze_embedding: bool,
    /// Std of Gaussian noise added to teacher-forced decoder inputs.
    pub input_noise_std: f64,
    /// Probability of replacing a teacher-forced input frame with the
    /// model's own first-pass prediction.
    pub scheduled_sampling: f64,
}

impl Default for TtsTrainConfig {
    fn default() -> Self {
        Self {
            model: TtsModelConfig::default(),
            stop_weight: 1.0,
            stop_pos_weight: 8.0,
            guided_attention_weight: 5.0,
            guided_attention_sigma: 0.2,
            epochs: 80,
            finetune_epochs: 20,
            batch_size: 8,
            lr: 1e-3,
            finetune_lr_scale: 0.1,
            warmup_steps: 200,
            clip_norm: 1.0,
            seed: 0,
            freeze_embedding: true,
            input_noise_std: 0.0,
            scheduled_sampling: 0.5,
        }
    }
}

impl TtsTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || !(self.lr > 0.0) || !(self.finetune_lr_scale > 0.0) {
            return Err(Error::Config("batch_size, lr and finetune_lr_scale must be positive".into()));
        }
        if self.stop_weight < 0.0 || self.guided_attention_weight < 0.0 || !(self.guided_attention_sigma > 0.0) || !(self.stop_pos_weight > 0.0) {
            return Err(Error::Config("loss weights must be >= 0 and sigma, stop_pos_weight > 0".into()));
        }
        Ok(())
    }
}

/// One training utterance: token ids, conditioning vector and normalised
/// target mel frames.
#[derive(Clone, Debug)]
pub struct TtsExample {
    pub utt_id: String,
    pub ids: Vec<usize>,
    pub spk: Vec<f32>,
    pub target: Mat<f32>,
}

pub struct LossTerms {
    pub mel_l1: Var,
    pub post_l1: Var,
    pub stop_bce: Var,
    pub guided: Option<Var>,
    pub total: Var,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherForcedLoss {
    pub utt_id: String,
    pub mel_l1: f64,
    pub stop_bce: f64,
}

fn stop_targets(frames: usize) -> Mat<f32> {
    let mut t = Mat::zeros(frames, 1);
    if frames > 0 {
        *t.at_mut(frames - 1, 0) = 1.0;
    }
    t
}

/// Post-net mel L1 and stop BCE of given predictions against `target`.
pub fn tts_metrics(mel_post: &Mat<f32>, stop_logits: &Mat<f32>, target: &Mat<f32>, stop_pos_weight: f64) -> Result<(f32, f32)> {
    let mask = vec![true; target.rows];
    let (l1, _) = sequence_loss(LossKind::L1, mel_post, Target::Values(target), &mask, 1.0)?;
    let (bce, _) = sequence_loss(LossKind::Bce, stop_logits, Target::Values(&stop_targets(target.rows)), &mask, stop_pos_weight)?;
    Ok((l1, bce))
}

/// Teacher-forced training objective for one utterance.
/// `inputs` replaces the shifted ground truth as decoder input when given.
pub fn tts_loss(model: &TtsModel, ctx: &mut Ctx<f32>, ex: &TtsExample, cfg: &TtsTrainConfig, ga_weight: f64, freeze_embedding: bool, inputs: Option<&Mat<f32>>) -> Result<LossTerms> {
    if ex.target.rows == 0 {
        return Err(Error::Invalid(format!("{}: no target frames", ex.utt_id)));
    }
    let memory = model.encode(ctx, &ex.ids, &ex.spk, freeze_embedding)?;
    let prev = match inputs {
        Some(m) => m.clone(),
        None => shifted_frames(&ex.target),
    };
    let out = model.decode(ctx, memory, &prev, true)?;
    let mask = vec![true; ex.target.rows];
    let mel_l1 = sequence_loss_var(&mut ctx.g, LossKind::L1, out.mel, Target::Values(&ex.target), &mask, 1.0)?;
    let post_l1 = sequence_loss_var(&mut ctx.g, LossKind::L1, out.mel_post, Target::Values(&ex.target), &mask, 1.0)?;
    let stop_bce = sequence_loss_var(&mut ctx.g, LossKind::Bce, out.stop_logits, Target::Values(&stop_targets(ex.target.rows)), &mask, cfg.stop_pos_weight)?;
    let mut total = ctx.g.add(mel_l1, post_l1);
    let s = ctx.g.scale(stop_bce, cfg.stop_weight);
    total = ctx.g.add(total, s);
    let mut guided = None;
    if ga_weight > 0.0 {
        let w = ctx.g.constant(guided_attention_weights(ex.target.rows, ex.ids.len(), cfg.guided_attention_sigma));
        let mut sum: Option<Var> = None;
        for &a in &out.cross_attention {
            let p = ctx.g.mul(a, w);
            let m = ctx.g.mean_all(p);
            sum = Some(match sum {
                None => m,
                Some(s) => ctx.g.add(s, m),
            });
        }
        if let Some(s) = sum {
            let ga = ctx.g.scale(s, 1.0 / out.cross_attention.len() as f64);
            let weighted = ctx.g.scale(ga, ga_weight);
            total = ctx.g.add(total, weighted);
            guided = Some(ga);
        }
    }
    Ok(LossTerms { mel_l1, post_l1, stop_bce, guided, total })
}

/// Enrollment embedding of every speaker in `manifest`.
pub fn speaker_embeddings(manifest: &CorpusManifest, spkemb: &SpkembModel) -> Result<BTreeMap<String, SpeakerEmbedding>> {
    manifest.speakers().into_iter().map(|s| Ok((s.clone(), extract_speaker_embedding(manifest, &s, spkemb)?))).collect()
}

fn examples(manifest: &CorpusManifest, model: &TtsModel, feats: &[Mat<f32>], speakers: &BTreeMap<String, SpeakerEmbedding>) -> Result<Vec<TtsExample>> {
    manifest
        .records
        .iter()
        .zip(feats)
        .map(|(r, f)| {
            let spk = speakers.get(&r.speaker_id).ok_or_else(|| Error::Invalid(format!("{}: no embedding for speaker {}", r.utt_id, r.speaker_id)))?;
            let ids = model.cfg.token_ids(&r.tokens()).map_err(|e| Error::Invalid(format!("{}: {e}", r.utt_id)))?;
            Ok(TtsExample { utt_id: r.utt_id.clone(), ids, spk: spk.vector.clone(), target: model.cmvn.apply(f) })
        })
        .collect()
}

fn eval_examples(model: &TtsModel, exs: &[TtsExample], cfg: &TtsTrainConfig) -> Result<Vec<TeacherForcedLoss>> {
    exs.iter()
        .map(|ex| {
            let mut ctx = Ctx::eval(&model.store);
            let memory = model.encode(&mut ctx, &ex.ids, &ex.spk, true)?;
            let out = model.decode(&mut ctx, memory, &shifted_frames(&ex.target), true)?;
            let (l1, bce) = tts_metrics(ctx.g.value(out.mel_post), ctx.g.value(out.stop_logits), &ex.target, cfg.stop_pos_weight)?;
            Ok(TeacherForcedLoss { utt_id: ex.utt_id.clone(), mel_l1: l1 as f64, stop_bce: bce as f64 })
        })
        .collect()
}

fn mean_l1(losses: &[TeacherForcedLoss]) -> f64 {
    losses.iter().map(|l| l.mel_l1).sum::<f64>() / losses.len().max(1) as f64
}

/// Decoder inputs with first-pass predictions mixed in and noise added,
/// or `None` for plain teacher forcing.
fn perturbed_inputs(model: &TtsModel, ex: &TtsExample, cfg: &TtsTrainConfig, rng: &mut Rng) -> Result<Option<Mat<f32>>> {
    if cfg.scheduled_sampling <= 0.0 && cfg.input_noise_std <= 0.0 {
        return Ok(None);
    }
    let mut prev = shifted_frames(&ex.target);
    if cfg.scheduled_sampling > 0.0 {
        let mut ctx = Ctx::eval(&model.store);
        let memory = model.encode(&mut ctx, &ex.ids, &ex.spk, true)?;
        let out = model.decode(&mut ctx, memory, &prev, false)?;
        let pred = ctx.g.value(out.mel);
        for r in 1..prev.rows {
            if rng.random::<f64>() < cfg.scheduled_sampling {
                prev.row_mut(r).copy_from_slice(pred.row(r - 1));
            }
        }
    }
    if cfg.input_noise_std > 0.0 {
        let normal = Normal::new(0.0, cfg.input_noise_std).map_err(|e| Error::Config(e.to_string()))?;
        for v in prev.data[prev.cols..].iter_mut() {
            *v += normal.sample(rng) as f32;
        }
    }
    Ok(Some(prev))
}

struct Schedule {
    epochs: usize,
    lr: f64,
    warmup: u64,
    ga_weight: f64,
    freeze: bool,
    seed: u64,
}

fn run_training(model: &mut TtsModel, train: &[TtsExample], valid: &[TtsExample], cfg: &TtsTrainConfig, sched: Schedule, log: &mut TrainLog) -> Result<()> {
    let mut opt = Adam::new(&model.store, AdamConfig { lr: sched.lr, ..AdamConfig::default() });
    if sched.freeze {
        opt.freeze(model.embed);
    }
    let mut rng = seeded_rng(sched.seed);
    let mut step = 0usize;
    for epoch in 1..=sched.epochs {
        let mut total = 0.0;
        for batch in shuffled(train.len(), &mut rng).chunks(cfg.batch_size) {
            opt.set_lr(warmup_lr(sched.lr, opt.steps(), sched.warmup));
            for &i in batch {
                let inputs = perturbed_inputs(model, &train[i], cfg, &mut rng)?;
                let grads = {
                    let mut ctx = Ctx::train(&model.store, &mut rng);
                    let terms = tts_loss(model, &mut ctx, &train[i], cfg, sched.ga_weight, sched.freeze, inputs.as_ref())?;
                    let v = ctx.g.scalar(terms.total) as f64;
                    check_finite(v, step)?;
                    total += v;
                    ctx.g.backward(terms.total)
                };
                grads.accumulate_into(&mut model.store);
            }
            apply_update(&mut model.store, &mut opt, batch.len(), cfg.clip_norm, log);
            step += 1;
        }
        let valid_loss = if valid.is_empty() { None } else { Some(mean_l1(&eval_examples(model, valid, cfg)?)) };
        let train_loss = total / train.len() as f64;
        log::info!("{} epoch {epoch}: train {train_loss:.4} valid {valid_loss:?}", log.module);
        log.epochs.push(EpochStats { epoch, train_loss, valid_loss });
    }
    Ok(())
}

/// Multi-speaker, two-language pretraining. Each speaker is conditioned on
/// its enrollment embedding over the training manifest.
pub fn pretrain_tts(manifest: &CorpusManifest, valid: Option<&CorpusManifest>, spkemb: &SpkembModel, cfg: &TtsTrainConfig) -> Result<(Checkpoint, TrainLog)> {
    cfg.validate()?;
    if manifest.languages().len() < 2 {
        return Err(Error::Invalid("TTS pretraining needs utterances from both languages".into()));
    }
    if spkemb.cfg.dim != cfg.model.spk_dim {
        return Err(Error::Config(format!("speaker embeddings have {} dims, TTS expects {}", spkemb.cfg.dim, cfg.model.spk_dim)));
    }
    let mut model = TtsModel::new(cfg.model.clone(), cfg.seed)?;
    let feats = manifest_features(manifest, &cfg.model.features)?;
    model.cmvn = Cmvn::fit(&feats)?;
    let speakers = speaker_embeddings(manifest, spkemb)?;
    let train = examples(manifest, &model, &feats, &speakers)?;
    let valid = match valid {
        Some(v) if !v.is_empty() => examples(v, &model, &manifest_features(v, &cfg.model.features)?, &speakers)?,
        _ => Vec::new(),
    };
    let mut log = TrainLog::new("tts-pretrain");
    let sched = Schedule { epochs: cfg.epochs, lr: cfg.lr, warmup: cfg.warmup_steps, ga_weight: cfg.guided_attention_weight, freeze: false, seed: cfg.seed.wrapping_add(1) };
    run_training(&mut model, &train, &valid, cfg, sched, &mut log)?;
    Ok((model.to_checkpoint(serde_json::to_string(cfg)?, cfg.seed), log))
}

/// Single-speaker adaptation at a reduced learning rate, without the
/// guided-attention term. With `freeze_embedding` the token table is left
/// exactly as pretrained.
pub fn finetune_tts(pretrained: &Checkpoint, target: &CorpusManifest, spk: &SpeakerEmbedding, cfg: &TtsTrainConfig) -> Result<(Checkpoint, TrainLog)> {
    cfg.validate()?;
    let speakers = target.speakers();
    if speakers.len() != 1 {
        return Err(Error::Invalid(format!("finetuning needs a single-speaker manifest, got {} speakers", speakers.len())));
    }
    let mut model = TtsModel::from_checkpoint(pretrained)?;
    if model.digest() != cfg.model.digest() {
        return Err(Error::DigestMismatch { expected: model.digest(), actual: cfg.model.digest() });
    }
    let feats = manifest_features(target, &cfg.model.features)?;
    let table = BTreeMap::from([(speakers[0].clone(), spk.clone())]);
    let train = examples(target, &model, &feats, &table)?;
    let mut log = TrainLog::new("tts-finetune");
    let sched = Schedule { epochs: cfg.finetune_epochs, lr: cfg.lr * cfg.finetune_lr_scale, warmup: 0, ga_weight: 0.0, freeze: cfg.freeze_embedding, seed: cfg.seed.wrapping_add(2) };
    run_training(&mut model, &train, &[], cfg, sched, &mut log)?;
    Ok((model.to_checkpoint(serde_json::to_string(cfg)?, cfg.seed), log))
}

/// Per-utterance teacher-forced post-net mel L1 and stop BCE, without dropout.
pub fn teacher_forced_eval(manifest: &CorpusManifest, ckpt: &Checkpoint, speakers: &BTreeMap<String, SpeakerEmbedding>) -> Result<Vec<TeacherForcedLoss>> {
    let model = TtsModel::from_checkpoint(ckpt)?;
    let cfg: TtsTrainConfig = ckpt.config()?;
    let feats = manifest_features(manifest, &model.cfg.features)?;
    let exs = examples(manifest, &model, &feats, speakers)?;
    eval_examples(&model, &exs, &cfg)
}
