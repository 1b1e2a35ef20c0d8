use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{gaussian_noise, mr_stft_loss_grad, validate_resolutions, Discriminator, StftResolution, Vocoder, VocoderModelConfig};
use crate::error::{Error, Result};
use crate::manifest::CorpusManifest;
use crate::nn::{mse_to_const, seeded_rng, Adam, AdamConfig, Checkpoint, Ctx, Mat, ParamStore};
use crate::train::{apply_update, check_finite, features, Cmvn, TrainLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocoderTrainConfig {
    pub model: VocoderModelConfig,
    pub resolutions: Vec<StftResolution>,
    pub lambda_adv: f64,
    /// Fraction of steps trained on the spectral loss alone.
    pub adv_start_fraction: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Mel frames per training segment.
    pub segment_frames: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub clip_norm: f64,
    pub seed: u64,
    /// Validation utterances vocoded in full for the training curve.
    pub valid_utterances: usize,
    pub eval_every: usize,
}

impl Default for VocoderTrainConfig {
    fn default() -> Self {
        Self {
            model: VocoderModelConfig::default(),
            resolutions: super::default_resolutions(),
            lambda_adv: 4.0,
            adv_start_fraction: 1.0 / 3.0,
            steps: 600,
            batch_size: 4,
            segment_frames: 8,
            lr_g: 2e-3,
            lr_d: 1e-3,
            clip_norm: 10.0,
            seed: 0,
            valid_utterances: 4,
            eval_every: 100,
        }
    }
}

impl VocoderTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        validate_resolutions(&self.resolutions)?;
        if self.lambda_adv < 0.0 || !(0.0..=1.0).contains(&self.adv_start_fraction) {
            return Err(Error::Config("need lambda_adv >= 0 and adv_start_fraction in [0, 1]".into()));
        }
        if self.batch_size == 0 || self.segment_frames == 0 || !(self.lr_g > 0.0) || !(self.lr_d > 0.0) || self.eval_every == 0 {
            return Err(Error::Config("batch_size, segment_frames, learning rates and eval_every must be positive".into()));
        }
        Ok(())
    }

    pub fn adv_start_step(&self) -> usize {
        (self.steps as f64 * self.adv_start_fraction).ceil() as usize
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VocoderStep {
    pub step: usize,
    pub mr_stft: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_adv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VocoderTrainLog {
    pub train: Vec<VocoderStep>,
    /// `(step, mean mr_stft)` on the fixed validation utterances.
    pub valid: Vec<(usize, f64)>,
    pub skipped_steps: u64,
}

impl VocoderTrainLog {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn first_valid(&self) -> Option<f64> {
        self.valid.first().map(|v| v.1)
    }

    pub fn last_valid(&self) -> Option<f64> {
        self.valid.last().map(|v| v.1)
    }
}

/// Normalised mel frames and the matching waveform at the output rate,
/// zero-padded or trimmed to `frames × factor` samples.
pub(crate) struct Pair {
    pub mel: Mat<f32>,
    pub audio: Vec<f32>,
    pub prior: Option<Mat<f32>>,
}

impl Pair {
    fn new(voc: &Vocoder, raw_mel: Mat<f32>, audio: Vec<f32>) -> Result<Self> {
        Ok(Pair { prior: voc.prior(&raw_mel)?, mel: voc.cmvn.apply(&raw_mel), audio })
    }
}

pub(crate) fn load_pairs(m: &CorpusManifest, cfg: &VocoderModelConfig) -> Result<Vec<(Mat<f32>, Vec<f32>)>> {
    let factor = cfg.upsample_factor();
    m.records
        .iter()
        .map(|r| {
            let w = m.load_audio(r)?;
            if w.sample_rate != cfg.output_rate {
                return Err(Error::Invalid(format!("{}: audio is {} Hz, vocoder output rate is {} Hz", r.utt_id, w.sample_rate, cfg.output_rate)));
            }
            let mel = features(&w, &cfg.features)?;
            let mut audio = w.samples;
            audio.resize(mel.rows * factor, 0.0);
            Ok((mel, audio))
        })
        .collect()
}

fn segment(p: &Pair, frames: usize, factor: usize, rng: &mut crate::nn::Rng) -> Pair {
    let f = frames.min(p.mel.rows);
    let start = rng.random_range(0..=p.mel.rows - f);
    let samples = start * factor..(start + f) * factor;
    Pair {
        mel: Mat::from_vec(f, p.mel.cols, p.mel.data[start * p.mel.cols..(start + f) * p.mel.cols].to_vec()),
        audio: p.audio[samples.clone()].to_vec(),
        prior: p.prior.as_ref().map(|q| Mat::from_vec(1, samples.len(), q.data[samples].to_vec())),
    }
}

fn validation_loss(voc: &Vocoder, pairs: &[Pair], cfg: &VocoderTrainConfig) -> Result<f64> {
    let mut total = 0.0;
    for (i, p) in pairs.iter().enumerate() {
        let noise = gaussian_noise(p.audio.len(), &mut seeded_rng(cfg.seed.wrapping_add(1000 + i as u64)));
        let y: Vec<f64> = voc.generate(&p.mel, &noise, p.prior.as_ref()).into_iter().map(|v| v.clamp(-1.0, 1.0) as f64).collect();
        let t: Vec<f64> = p.audio.iter().map(|&v| v as f64).collect();
        total += mr_stft_loss_grad(&y, &t, &cfg.resolutions)?.0;
    }
    Ok(total / pairs.len().max(1) as f64)
}

/// Alternating generator/discriminator training on random segments. The
/// generator sees only the spectral loss until `adv_start_step`.
pub fn train_vocoder(manifest: &CorpusManifest, valid: Option<&CorpusManifest>, cfg: &VocoderTrainConfig) -> Result<(Checkpoint, VocoderTrainLog)> {
    cfg.validate()?;
    if manifest.is_empty() {
        return Err(Error::Invalid("vocoder training manifest is empty".into()));
    }
    let mut voc = Vocoder::new(cfg.model, cfg.seed)?;
    let raw = load_pairs(manifest, &cfg.model)?;
    voc.cmvn = Cmvn::fit(raw.iter().map(|(m, _)| m))?;
    let pairs: Vec<Pair> = raw.into_iter().filter(|(m, _)| m.rows > 0).map(|(m, a)| Pair::new(&voc, m, a)).collect::<Result<_>>()?;
    let valid_src = match valid {
        Some(v) if !v.is_empty() => v.clone(),
        _ => manifest.clone(),
    };
    let valid_src = CorpusManifest { records: valid_src.records.into_iter().take(cfg.valid_utterances.max(1)).collect(), base_dir: valid_src.base_dir };
    let valid_pairs: Vec<Pair> = load_pairs(&valid_src, &cfg.model)?.into_iter().map(|(m, a)| Pair::new(&voc, m, a)).collect::<Result<_>>()?;

    let mut dstore = ParamStore::new();
    let mut rng = seeded_rng(cfg.seed.wrapping_add(1));
    let disc = Discriminator::new(&mut dstore, cfg.model.discriminator, &mut rng);
    let mut opt_g = Adam::new(&voc.store, AdamConfig { lr: cfg.lr_g, ..AdamConfig::default() });
    let mut opt_d = Adam::new(&dstore, AdamConfig { lr: cfg.lr_d, ..AdamConfig::default() });
    let factor = cfg.model.upsample_factor();
    let adv_start = cfg.adv_start_step();
    let mut log = VocoderTrainLog::default();
    let mut glog = TrainLog::new("vocoder-g");
    let mut dlog = TrainLog::new("vocoder-d");
    log.valid.push((0, validation_loss(&voc, &valid_pairs, cfg)?));

    for step in 1..=cfg.steps {
        let adversarial = step > adv_start && cfg.lambda_adv > 0.0;
        let batch: Vec<Pair> = (0..cfg.batch_size)
            .map(|_| {
                let i = rng.random_range(0..pairs.len());
                segment(&pairs[i], cfg.segment_frames, factor, &mut rng)
            })
            .collect();
        let (mut mr_sum, mut adv_sum) = (0.0, 0.0);
        let mut fakes = Vec::with_capacity(batch.len());
        for Pair { mel, audio, prior } in &batch {
            let noise = gaussian_noise(audio.len(), &mut rng);
            let grads = {
                let mut ctx = Ctx::train(&voc.store, &mut rng);
                let y = voc.generator.forward(&mut ctx, mel, &noise, prior.as_ref());
                let yv: Vec<f64> = ctx.g.value(y).data.iter().map(|&v| v as f64).collect();
                let t: Vec<f64> = audio.iter().map(|&v| v as f64).collect();
                let (mr, g) = mr_stft_loss_grad(&yv, &t, &cfg.resolutions)?;
                check_finite(mr, step)?;
                mr_sum += mr;
                let mut total = ctx.g.fused_scalar(y, mr as f32, Mat::from_vec(1, g.len(), g.into_iter().map(|v| v as f32).collect()));
                if adversarial {
                    let fake = ctx.g.value(y).clone();
                    let (adv, dgrad) = {
                        let mut dctx = Ctx::eval(&dstore);
                        let x = dctx.g.input(fake.clone());
                        let s = disc.forward(&mut dctx, x);
                        let l = mse_to_const(&mut dctx.g, s, 1.0);
                        let v = dctx.g.scalar(l);
                        let grads = dctx.g.backward(l);
                        (v, grads.get(x).cloned().unwrap_or_else(|| Mat::zeros(1, fake.cols)))
                    };
                    check_finite(adv as f64, step)?;
                    adv_sum += adv as f64;
                    let a = ctx.g.fused_scalar(y, adv, dgrad);
                    let a = ctx.g.scale(a, cfg.lambda_adv);
                    total = ctx.g.add(total, a);
                    fakes.push(fake);
                }
                ctx.g.backward(total)
            };
            grads.accumulate_into(&mut voc.store);
        }
        apply_update(&mut voc.store, &mut opt_g, batch.len(), cfg.clip_norm, &mut glog);
        let n = batch.len() as f64;
        let mut rec = VocoderStep { step, mr_stft: mr_sum / n, ..Default::default() };
        if adversarial {
            let mut d_sum = 0.0;
            for (Pair { audio, .. }, fake) in batch.iter().zip(&fakes) {
                let grads = {
                    let mut dctx = Ctx::train(&dstore, &mut rng);
                    let real = dctx.g.constant(Mat::from_vec(1, audio.len(), audio.clone()));
                    let sr = disc.forward(&mut dctx, real);
                    let lr = mse_to_const(&mut dctx.g, sr, 1.0);
                    let fk = dctx.g.constant(fake.clone());
                    let sf = disc.forward(&mut dctx, fk);
                    let lf = mse_to_const(&mut dctx.g, sf, 0.0);
                    let l = dctx.g.add(lr, lf);
                    let v = dctx.g.scalar(l) as f64;
                    check_finite(v, step)?;
                    d_sum += v;
                    dctx.g.backward(l)
                };
                grads.accumulate_into(&mut dstore);
            }
            apply_update(&mut dstore, &mut opt_d, batch.len(), cfg.clip_norm, &mut dlog);
            rec.g_adv = Some(adv_sum / n);
            rec.d_loss = Some(d_sum / n);
        }
        log.train.push(rec);
        if step % cfg.eval_every == 0 || step == cfg.steps {
            let v = validation_loss(&voc, &valid_pairs, cfg)?;
            log::info!("vocoder step {step}: mr_stft {:.4} valid {v:.4}", mr_sum / n);
            log.valid.push((step, v));
        }
    }
    log.skipped_steps = glog.skipped_steps + dlog.skipped_steps;
    Ok((voc.to_checkpoint(serde_json::to_string(cfg)?, cfg.seed), log))
}
