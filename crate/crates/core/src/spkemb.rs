//! Toy x-vector: convolutional frame encoder, mean+std statistics pooling,
//! and an embedding layer trained through a speaker classifier.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::{digest_hex, FeatureConfig};
use crate::error::{Error, Result};
use crate::manifest::CorpusManifest;
use crate::nn::{seeded_rng, Adam, AdamConfig, Checkpoint, Conv1d, Ctx, Linear, LossKind, Mat, ModuleKind, ParamStore, Target, Var};
use crate::train::{apply_update, check_finite, features, manifest_features, shuffled, Cmvn, EpochStats, TrainLog};
use crate::Waveform;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpkembModelConfig {
    pub features: FeatureConfig,
    pub channels: usize,
    pub layers: usize,
    pub dim: usize,
}

impl Default for SpkembModelConfig {
    fn default() -> Self {
        Self { features: FeatureConfig::default(), channels: 64, layers: 3, dim: 16 }
    }
}

impl SpkembModelConfig {
    pub fn digest(&self) -> String {
        let arch = serde_json::json!({ "channels": self.channels, "layers": self.layers, "dim": self.dim });
        digest_hex(format!("spkemb-v1;{};{}", arch, self.features.digest()).as_bytes())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpkembTrainConfig {
    pub model: SpkembModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for SpkembTrainConfig {
    fn default() -> Self {
        Self { model: SpkembModelConfig::default(), epochs: 15, batch_size: 8, lr: 2e-3, clip_norm: 5.0, seed: 0 }
    }
}

/// Unit-norm speaker vector and the utterances it was computed from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEmbedding {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker_id: Option<String>,
    pub vector: Vec<f32>,
    pub source: Vec<String>,
}

impl SpeakerEmbedding {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let e: Self = serde_json::from_str(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?;
        let norm = e.vector.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-4 {
            return Err(Error::Invalid(format!("{}: embedding norm {norm} is not 1", path.display())));
        }
        Ok(e)
    }
}

pub struct SpkembModel {
    pub cfg: SpkembModelConfig,
    pub store: ParamStore<f32>,
    pub cmvn: Cmvn,
    convs: Vec<Conv1d>,
    embed: Linear,
}

/// Mean and population standard deviation over time of a `frames × channels`
/// sequence, concatenated.
pub fn stats_pool(ctx: &mut Ctx<f32>, x: Var) -> Var {
    let m = ctx.g.mean_rows(x);
    let s = ctx.g.std_rows(x);
    ctx.g.concat_cols(&[m, s])
}

impl SpkembModel {
    pub fn new(cfg: SpkembModelConfig, seed: u64) -> Result<Self> {
        if cfg.layers == 0 || cfg.channels == 0 || cfg.dim == 0 {
            return Err(Error::Config("spkemb layers, channels and dim must be positive".into()));
        }
        cfg.features.validate()?;
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        let mut convs = Vec::new();
        for l in 0..cfg.layers {
            let c_in = if l == 0 { cfg.features.n_mels } else { cfg.channels };
            let (k, dil) = if l == 0 { (5, 1) } else { (3, l + 1) };
            convs.push(Conv1d::new(&mut store, &format!("spk.conv{l}"), c_in, cfg.channels, k, dil, &mut rng));
        }
        let embed = Linear::new(&mut store, "spk.embed", 2 * cfg.channels, cfg.dim, true, &mut rng);
        Ok(Self { cfg, store, cmvn: Cmvn::identity(cfg.features.n_mels), convs, embed })
    }

    pub fn digest(&self) -> String {
        self.cfg.digest()
    }

    /// Un-normalised embedding (`1 × dim`) of raw log-mel frames.
    pub fn forward(&self, ctx: &mut Ctx<f32>, mel: &Mat<f32>) -> Result<Var> {
        if mel.rows == 0 {
            return Err(Error::Invalid("cannot embed an empty utterance".into()));
        }
        if mel.cols != self.cfg.features.n_mels {
            return Err(Error::Shape(format!("features have {} mel bins, model expects {}", mel.cols, self.cfg.features.n_mels)));
        }
        let x = ctx.g.input(self.cmvn.apply(mel).transpose());
        let mut h = x;
        for c in &self.convs {
            let y = c.forward(ctx, h);
            h = ctx.g.relu(y);
        }
        let frames = ctx.g.transpose(h);
        let pooled = stats_pool(ctx, frames);
        Ok(self.embed.forward(ctx, pooled))
    }

    pub fn embed_mel(&self, mel: &Mat<f32>) -> Result<Vec<f32>> {
        let mut ctx = Ctx::eval(&self.store);
        let v = self.forward(&mut ctx, mel)?;
        Ok(ctx.g.value(v).data.clone())
    }

    pub fn embed_waveform(&self, w: &Waveform) -> Result<Vec<f32>> {
        self.embed_mel(&features(w, &self.cfg.features)?)
    }

    pub fn to_checkpoint(&self, train_config_json: String, seed: u64) -> Checkpoint {
        let mut bundle = self.store.to_bundle(&self.digest());
        bundle.tensors.extend(self.cmvn.tensors("cmvn"));
        Checkpoint { module_kind: ModuleKind::Spkemb, bundle, train_config: train_config_json, rng_seed: seed }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(&ckpt.train_config)?;
        let cfg: SpkembModelConfig = serde_json::from_value(value.get("model").cloned().ok_or_else(|| Error::Checkpoint("train config lacks a model section".into()))?)?;
        let mut m = Self::new(cfg, 0)?;
        ckpt.expect(ModuleKind::Spkemb, &m.digest())?;
        m.store.load_bundle(&ckpt.bundle, &["cmvn.mean", "cmvn.std"])?;
        m.cmvn = Cmvn::from_checkpoint(ckpt, "cmvn")?;
        Ok(m)
    }
}

fn normalise(v: &mut [f32]) -> Result<()> {
    let norm = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::Invalid("zero embedding vector".into()));
    }
    v.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
    Ok(())
}

/// Per-utterance embeddings averaged, then L2-normalised.
pub fn embedding_from_vectors(vectors: &[Vec<f32>], source: Vec<String>) -> Result<SpeakerEmbedding> {
    let first = vectors.first().ok_or_else(|| Error::Invalid("no enrollment utterances".into()))?;
    let mut mean = vec![0.0f64; first.len()];
    for v in vectors {
        for (m, &x) in mean.iter_mut().zip(v) {
            *m += x as f64;
        }
    }
    let mut vector: Vec<f32> = mean.into_iter().map(|m| (m / vectors.len() as f64) as f32).collect();
    normalise(&mut vector)?;
    Ok(SpeakerEmbedding { speaker_id: None, vector, source })
}

pub fn extract_embedding(waveforms: &[Waveform], model: &SpkembModel) -> Result<SpeakerEmbedding> {
    if waveforms.is_empty() {
        return Err(Error::Invalid("no enrollment utterances".into()));
    }
    let vectors = waveforms.iter().map(|w| model.embed_waveform(w)).collect::<Result<Vec<_>>>()?;
    embedding_from_vectors(&vectors, Vec::new())
}

/// Enrollment embedding over all of `speaker`'s utterances in `manifest`.
pub fn extract_speaker_embedding(manifest: &CorpusManifest, speaker: &str, model: &SpkembModel) -> Result<SpeakerEmbedding> {
    let recs: Vec<_> = manifest.records.iter().filter(|r| r.speaker_id == speaker).collect();
    if recs.is_empty() {
        return Err(Error::Invalid(format!("speaker {speaker} has no utterances in the manifest")));
    }
    let vectors = recs.iter().map(|r| model.embed_waveform(&manifest.load_audio(r)?)).collect::<Result<Vec<_>>>()?;
    let mut e = embedding_from_vectors(&vectors, recs.iter().map(|r| r.utt_id.clone()).collect())?;
    e.speaker_id = Some(speaker.to_string());
    Ok(e)
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("embedding sizes {} and {} differ", a.len(), b.len())));
    }
    let na = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Invalid("zero embedding vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Trains the encoder through a softmax over the manifest's speakers. The
/// classifier head is discarded; `valid` loss is tracked when given.
pub fn train_spkemb(manifest: &CorpusManifest, valid: Option<&CorpusManifest>, cfg: &SpkembTrainConfig) -> Result<(Checkpoint, TrainLog)> {
    let speakers = manifest.speakers();
    if speakers.len() < 2 {
        return Err(Error::Invalid(format!("speaker embedding training needs >= 2 speakers, manifest has {}", speakers.len())));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("epochs, batch_size and lr must be positive".into()));
    }
    let mut model = SpkembModel::new(cfg.model, cfg.seed)?;
    let mut rng = seeded_rng(cfg.seed.wrapping_add(1));
    let head = Linear::new(&mut model.store, "spk.head", cfg.model.dim, speakers.len(), true, &mut rng);
    let feats = manifest_features(manifest, &cfg.model.features)?;
    model.cmvn = Cmvn::fit(&feats)?;
    let label = |spk: &str| speakers.iter().position(|s| s == spk);
    let labels: Vec<usize> = manifest.records.iter().map(|r| label(&r.speaker_id).expect("speaker listed")).collect();
    let valid_data = match valid {
        Some(v) if !v.is_empty() => {
            let f = manifest_features(v, &cfg.model.features)?;
            let l = v.records.iter().map(|r| label(&r.speaker_id).ok_or_else(|| Error::Invalid(format!("validation speaker {} not in training set", r.speaker_id)))).collect::<Result<Vec<_>>>()?;
            Some((f, l))
        }
        _ => None,
    };
    let loss_of = |model: &SpkembModel, ctx: &mut Ctx<f32>, mel: &Mat<f32>, y: usize| -> Result<Var> {
        let e = model.forward(ctx, mel)?;
        let logits = head.forward(ctx, e);
        crate::nn::sequence_loss_var(&mut ctx.g, LossKind::CrossEntropy, logits, Target::Classes(&[y]), &[true], 1.0)
    };
    let mut opt = Adam::new(&model.store, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut log = TrainLog::new("spkemb");
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let order = shuffled(feats.len(), &mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            for &i in batch {
                let grads = {
                    let mut ctx = Ctx::train(&model.store, &mut rng);
                    let l = loss_of(&model, &mut ctx, &feats[i], labels[i])?;
                    let v = ctx.g.scalar(l) as f64;
                    check_finite(v, step)?;
                    total += v;
                    ctx.g.backward(l)
                };
                grads.accumulate_into(&mut model.store);
            }
            apply_update(&mut model.store, &mut opt, batch.len(), cfg.clip_norm, &mut log);
            step += 1;
        }
        let valid_loss = match &valid_data {
            Some((f, l)) => {
                let mut s = 0.0;
                for (mel, &y) in f.iter().zip(l) {
                    let mut ctx = Ctx::eval(&model.store);
                    let v = loss_of(&model, &mut ctx, mel, y)?;
                    s += ctx.g.scalar(v) as f64;
                }
                Some(s / f.len() as f64)
            }
            None => None,
        };
        log::info!("spkemb epoch {epoch}: train {:.4} valid {:?}", total / feats.len() as f64, valid_loss);
        log.epochs.push(EpochStats { epoch, train_loss: total / feats.len() as f64, valid_loss });
    }
    // Drop the classifier head: rebuild a head-less store with the trained values.
    let mut out = SpkembModel::new(cfg.model, cfg.seed)?;
    let bundle = model.store.to_bundle(&out.digest());
    out.store.load_bundle(&bundle, &["spk.head.w", "spk.head.b"])?;
    out.cmvn = model.cmvn.clone();
    Ok((out.to_checkpoint(serde_json::to_string(cfg)?, cfg.seed), log))
}

/// Nearest-centroid speaker identification: the speaker whose enrollment
/// embedding has the highest cosine with each utterance.
pub fn identify(vector: &[f32], enrolled: &[SpeakerEmbedding]) -> Result<usize> {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, e) in enrolled.iter().enumerate() {
        let s = similarity(vector, &e.vector)?;
        if s > best.1 {
            best = (i, s);
        }
    }
    if enrolled.is_empty() {
        return Err(Error::Invalid("no enrolled speakers".into()));
    }
    Ok(best.0)
}
