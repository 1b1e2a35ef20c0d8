//! Speaker-conditioned Transformer TTS over the shared two-language token
//! inventory. Tokens from either language index one embedding table.

mod synth;
mod train;

use serde::{Deserialize, Serialize};

pub use synth::{synthesize, Synthesis, SynthesisConfig};
pub use train::{finetune_tts, pretrain_tts, speaker_embeddings, teacher_forced_eval, tts_loss, tts_metrics, LossTerms, TeacherForcedLoss, TtsExample, TtsTrainConfig};

use crate::dsp::{digest_hex, FeatureConfig};
use crate::error::{Error, Result};
use crate::nn::{seeded_rng, Checkpoint, Conv1d, Ctx, Linear, Mat, Memory, ModuleKind, ParamId, ParamStore, StackMode, TransformerConfig, TransformerStack, Var};
use crate::tokens::SYMBOLS;
use crate::train::Cmvn;

/// Name of the token embedding table in the parameter store.
pub const EMBEDDING_PARAM: &str = "tts.embed";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TtsModelConfig {
    pub features: FeatureConfig,
    /// Shared token inventory; position is the embedding row.
    pub vocab: Vec<String>,
    pub spk_dim: usize,
    pub encoder: TransformerConfig,
    pub decoder: TransformerConfig,
    pub prenet_dim: usize,
    pub prenet_dropout: f64,
    /// Decoder frame positions are encoded as `frame · decoder_position_scale`,
    /// roughly one unit per token.
    pub decoder_position_scale: f64,
    pub postnet_channels: usize,
    pub postnet_layers: usize,
}

impl Default for TtsModelConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            vocab: SYMBOLS.iter().map(|s| s.to_string()).collect(),
            spk_dim: 16,
            encoder: TransformerConfig { layers: 2, heads: 2, d_model: 64, d_ff: 128, dropout: 0.1 },
            decoder: TransformerConfig { layers: 2, heads: 2, d_model: 64, d_ff: 128, dropout: 0.1 },
            prenet_dim: 64,
            prenet_dropout: 0.5,
            decoder_position_scale: 0.125,
            postnet_channels: 64,
            postnet_layers: 3,
        }
    }
}

impl TtsModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        for lang in [crate::synthcorpus::Language::A, crate::synthcorpus::Language::B] {
            for s in crate::synthcorpus::inventory(lang).symbols {
                if !self.vocab.iter().any(|v| *v == s) {
                    return Err(Error::Config(format!("vocabulary lacks language {lang} token {s:?}")));
                }
            }
        }
        if self.encoder.d_model != self.decoder.d_model {
            return Err(Error::Config("encoder and decoder widths differ".into()));
        }
        if self.spk_dim == 0 || self.prenet_dim == 0 || self.postnet_layers < 2 || self.postnet_channels == 0 {
            return Err(Error::Config("spk_dim, prenet_dim and postnet_channels must be positive, postnet_layers >= 2".into()));
        }
        if !(self.decoder_position_scale > 0.0) {
            return Err(Error::Config("decoder_position_scale must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.prenet_dropout) {
            return Err(Error::Config("prenet_dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        let arch = serde_json::json!({
            "vocab": self.vocab, "spk_dim": self.spk_dim, "encoder": self.encoder, "decoder": self.decoder,
            "prenet": [self.prenet_dim], "decoder_position_scale": self.decoder_position_scale, "postnet": [self.postnet_channels, self.postnet_layers],
        });
        digest_hex(format!("tts-v1;{};{}", arch, self.features.digest()).as_bytes())
    }

    pub fn token_ids(&self, tokens: &crate::TokenSequence) -> Result<Vec<usize>> {
        tokens
            .symbols
            .iter()
            .map(|s| self.vocab.iter().position(|v| v == s).ok_or_else(|| Error::Invalid(format!("token {s:?} is not in the TTS vocabulary"))))
            .collect()
    }
}

/// Frame-level network outputs, all in normalised mel units.
pub struct TtsOutputs {
    pub mel: Var,
    pub mel_post: Var,
    pub stop_logits: Var,
    pub cross_attention: Vec<Var>,
}

pub struct TtsModel {
    pub cfg: TtsModelConfig,
    pub store: ParamStore<f32>,
    pub cmvn: Cmvn,
    pub embed: ParamId,
    spk_proj: Linear,
    encoder: TransformerStack,
    prenet: [Linear; 2],
    dec_in: Linear,
    decoder: TransformerStack,
    mel_out: Linear,
    stop_out: Linear,
    postnet: Vec<Conv1d>,
}

impl TtsModel {
    pub fn new(cfg: TtsModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        let d = cfg.encoder.d_model;
        let n_mels = cfg.features.n_mels;
        let embed = store.normal(EMBEDDING_PARAM, cfg.vocab.len(), d, (d as f64).powf(-0.5), &mut rng);
        let spk_proj = Linear::new(&mut store, "tts.spk", cfg.spk_dim, d, true, &mut rng);
        let encoder = TransformerStack::new(&mut store, "tts.enc", cfg.encoder, StackMode::Encoder, &mut rng)?;
        let prenet = [
            Linear::new(&mut store, "tts.prenet0", n_mels, cfg.prenet_dim, true, &mut rng),
            Linear::new(&mut store, "tts.prenet1", cfg.prenet_dim, cfg.prenet_dim, true, &mut rng),
        ];
        let dec_in = Linear::new(&mut store, "tts.dec_in", cfg.prenet_dim, d, true, &mut rng);
        let decoder = TransformerStack::new(&mut store, "tts.dec", cfg.decoder, StackMode::DecoderWithCrossAttention, &mut rng)?;
        let mel_out = Linear::new(&mut store, "tts.mel", d, n_mels, true, &mut rng);
        let stop_out = Linear::new(&mut store, "tts.stop", d, 1, true, &mut rng);
        let postnet = (0..cfg.postnet_layers)
            .map(|l| {
                let c_in = if l == 0 { n_mels } else { cfg.postnet_channels };
                let c_out = if l + 1 == cfg.postnet_layers { n_mels } else { cfg.postnet_channels };
                Conv1d::new(&mut store, &format!("tts.post{l}"), c_in, c_out, 5, 1, &mut rng)
            })
            .collect();
        Ok(Self { cmvn: Cmvn::identity(n_mels), cfg, store, embed, spk_proj, encoder, prenet, dec_in, decoder, mel_out, stop_out, postnet })
    }

    pub fn digest(&self) -> String {
        self.cfg.digest()
    }

    /// Encoder memory: token embeddings through the encoder, plus the
    /// projected speaker embedding on every frame.
    pub fn encode(&self, ctx: &mut Ctx<f32>, ids: &[usize], spk: &[f32], freeze_embedding: bool) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::Invalid("empty token sequence".into()));
        }
        if spk.len() != self.cfg.spk_dim {
            return Err(Error::Shape(format!("speaker embedding has {} dims, model expects {}", spk.len(), self.cfg.spk_dim)));
        }
        let table = ctx.p(self.embed);
        let e = ctx.g.embed(table, ids, freeze_embedding);
        let e = ctx.g.scale(e, (self.cfg.encoder.d_model as f64).sqrt());
        let h = self.encoder.forward(ctx, e, None, None)?.out;
        let s = ctx.g.input(Mat::from_vec(1, spk.len(), spk.to_vec()));
        let s = self.spk_proj.forward(ctx, s);
        Ok(ctx.g.add_row(h, s))
    }

    /// Decoder pass over `prev` (`frames × n_mels`, normalised; row 0 is the
    /// all-zero go frame).
    pub fn decode(&self, ctx: &mut Ctx<f32>, memory: Var, prev: &Mat<f32>, with_postnet: bool) -> Result<TtsOutputs> {
        self.decode_masked(ctx, memory, prev, with_postnet, None)
    }

    /// As [`decode`](Self::decode), with explicit pre-net dropout masks
    /// (already scaled by the keep probability) in place of sampled ones.
    pub fn decode_masked(&self, ctx: &mut Ctx<f32>, memory: Var, prev: &Mat<f32>, with_postnet: bool, prenet_masks: Option<&[Mat<f32>; 2]>) -> Result<TtsOutputs> {
        let mut x = ctx.g.input(prev.clone());
        for (i, l) in self.prenet.iter().enumerate() {
            x = l.forward(ctx, x);
            x = ctx.g.relu(x);
            x = match prenet_masks {
                Some(m) => {
                    let m = ctx.g.constant(m[i].clone());
                    ctx.g.mul(x, m)
                }
                None => ctx.dropout(x, self.cfg.prenet_dropout),
            };
        }
        let x = self.dec_in.forward(ctx, x);
        let dec = self.decoder.forward_scaled(ctx, x, None, Some(Memory { value: memory, mask: None }), self.cfg.decoder_position_scale)?;
        let mel = self.mel_out.forward(ctx, dec.out);
        let stop_logits = self.stop_out.forward(ctx, dec.out);
        let mel_post = if with_postnet { self.postnet(ctx, mel) } else { mel };
        Ok(TtsOutputs { mel, mel_post, stop_logits, cross_attention: dec.cross_attention })
    }

    pub(crate) fn postnet(&self, ctx: &mut Ctx<f32>, mel: Var) -> Var {
        let mut h = ctx.g.transpose(mel);
        let last = self.postnet.len() - 1;
        for (i, c) in self.postnet.iter().enumerate() {
            h = c.forward(ctx, h);
            if i < last {
                h = ctx.g.tanh(h);
                h = ctx.dropout(h, self.cfg.decoder.dropout);
            }
        }
        let r = ctx.g.transpose(h);
        ctx.g.add(mel, r)
    }

    pub fn embedding_table(&self) -> &Mat<f32> {
        self.store.value(self.embed)
    }

    pub fn to_checkpoint(&self, train_config_json: String, seed: u64) -> Checkpoint {
        let mut bundle = self.store.to_bundle(&self.digest());
        bundle.tensors.extend(self.cmvn.tensors("cmvn"));
        Checkpoint { module_kind: ModuleKind::Tts, bundle, train_config: train_config_json, rng_seed: seed }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(&ckpt.train_config)?;
        let cfg: TtsModelConfig = serde_json::from_value(value.get("model").cloned().ok_or_else(|| Error::Checkpoint("train config lacks a model section".into()))?)?;
        let mut m = Self::new(cfg, 0)?;
        ckpt.expect(ModuleKind::Tts, &m.digest())?;
        m.store.load_bundle(&ckpt.bundle, &["cmvn.mean", "cmvn.std"])?;
        m.cmvn = Cmvn::from_checkpoint(ckpt, "cmvn")?;
        Ok(m)
    }
}

/// Decoder inputs for teacher forcing: the go frame followed by every
/// target frame but the last.
pub fn shifted_frames(target: &Mat<f32>) -> Mat<f32> {
    let mut prev = Mat::zeros(target.rows, target.cols);
    for r in 1..target.rows {
        prev.row_mut(r).copy_from_slice(target.row(r - 1));
    }
    prev
}

/// `1 − exp(−(n/N − t/T)² / 2σ²)` penalty for decoder frame `n` attending to token `t`.
pub fn guided_attention_weights(frames: usize, tokens: usize, sigma: f64) -> Mat<f32> {
    let mut w = Mat::zeros(frames, tokens);
    for n in 0..frames {
        for t in 0..tokens {
            let d = n as f64 / frames as f64 - t as f64 / tokens as f64;
            *w.at_mut(n, t) = (1.0 - (-d * d / (2.0 * sigma * sigma)).exp()) as f32;
        }
    }
    w
}
