use serde::{Deserialize, Serialize};

use super::{CTC_CLASSES, EOS_ID, SOS, VOCAB_SIZE};
use crate::dsp::{digest_hex, FeatureConfig};
use crate::error::{Error, Result};
use crate::nn::{seeded_rng, Checkpoint, Ctx, Linear, Mat, Memory, ModuleKind, ParamId, ParamStore, StackMode, TransformerConfig, TransformerStack, Var};
use crate::train::Cmvn;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AsrModelConfig {
    pub features: FeatureConfig,
    /// Consecutive frames concatenated before the encoder.
    pub stack: usize,
    pub encoder: TransformerConfig,
    pub decoder: TransformerConfig,
}

impl Default for AsrModelConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            stack: 2,
            encoder: TransformerConfig { layers: 2, heads: 4, d_model: 64, d_ff: 128, dropout: 0.1 },
            decoder: TransformerConfig { layers: 1, heads: 4, d_model: 64, d_ff: 128, dropout: 0.1 },
        }
    }
}

impl AsrModelConfig {
    /// Identifies the architecture and its input features.
    pub fn digest(&self) -> String {
        let arch = serde_json::json!({ "stack": self.stack, "encoder": self.encoder, "decoder": self.decoder, "vocab": VOCAB_SIZE });
        digest_hex(format!("asr-v1;{};{}", arch, self.features.digest()).as_bytes())
    }
}

pub struct AsrModel {
    pub cfg: AsrModelConfig,
    pub store: ParamStore<f32>,
    pub cmvn: Cmvn,
    in_proj: Linear,
    encoder: TransformerStack,
    ctc_head: Linear,
    embed: ParamId,
    decoder: TransformerStack,
    out: Linear,
}

impl AsrModel {
    pub fn new(cfg: AsrModelConfig, seed: u64) -> Result<Self> {
        if cfg.stack == 0 {
            return Err(Error::Config("stack must be >= 1".into()));
        }
        if cfg.encoder.d_model != cfg.decoder.d_model {
            return Err(Error::Config("encoder and decoder widths differ".into()));
        }
        cfg.features.validate()?;
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        let d = cfg.encoder.d_model;
        let in_proj = Linear::new(&mut store, "asr.in", cfg.features.n_mels * cfg.stack, d, true, &mut rng);
        let encoder = TransformerStack::new(&mut store, "asr.enc", cfg.encoder, StackMode::Encoder, &mut rng)?;
        let ctc_head = Linear::new(&mut store, "asr.ctc", d, CTC_CLASSES, true, &mut rng);
        let embed = store.normal("asr.embed", VOCAB_SIZE, d, (d as f64).powf(-0.5), &mut rng);
        let decoder = TransformerStack::new(&mut store, "asr.dec", cfg.decoder, StackMode::DecoderWithCrossAttention, &mut rng)?;
        let out = Linear::new(&mut store, "asr.out", d, VOCAB_SIZE, true, &mut rng);
        Ok(Self { cfg, store, cmvn: Cmvn::identity(cfg.features.n_mels), in_proj, encoder, ctc_head, embed, decoder, out })
    }

    pub fn digest(&self) -> String {
        self.cfg.digest()
    }

    /// Normalised, frame-stacked encoder input (`ceil(T/stack) × n_mels·stack`).
    pub fn encoder_input(&self, feats: &Mat<f32>) -> Mat<f32> {
        let n = self.cmvn.apply(feats);
        let s = self.cfg.stack;
        let rows = n.rows.div_ceil(s);
        let mut out = Mat::zeros(rows, n.cols * s);
        for r in 0..rows {
            for k in 0..s {
                let src = (r * s + k).min(n.rows - 1);
                out.row_mut(r)[k * n.cols..(k + 1) * n.cols].copy_from_slice(n.row(src));
            }
        }
        out
    }

    pub fn encode(&self, ctx: &mut Ctx<f32>, input: &Mat<f32>) -> Result<Var> {
        let x = ctx.g.input(input.clone());
        let h = self.in_proj.forward(ctx, x);
        Ok(self.encoder.forward(ctx, h, None, None)?.out)
    }

    /// Per-frame log-probabilities over blank + symbols.
    pub fn ctc_log_probs(&self, ctx: &mut Ctx<f32>, enc: Var) -> Var {
        let logits = self.ctc_head.forward(ctx, enc);
        ctx.g.log_softmax_rows(logits)
    }

    /// Decoder logits for every position of `prefix` (which starts with SOS).
    pub fn decoder_logits(&self, ctx: &mut Ctx<f32>, enc: Var, prefix: &[usize]) -> Result<Var> {
        let table = ctx.p(self.embed);
        let e = ctx.g.embed(table, prefix, false);
        let scale = (self.cfg.decoder.d_model as f64).sqrt();
        let e = ctx.g.scale(e, scale);
        let h = self.decoder.forward(ctx, e, None, Some(Memory { value: enc, mask: None }))?.out;
        Ok(self.out.forward(ctx, h))
    }

    pub fn to_checkpoint(&self, train_config_json: String, seed: u64) -> Checkpoint {
        let mut bundle = self.store.to_bundle(&self.digest());
        bundle.tensors.extend(self.cmvn.tensors("cmvn"));
        Checkpoint { module_kind: ModuleKind::Asr, bundle, train_config: train_config_json, rng_seed: seed }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(&ckpt.train_config)?;
        let cfg: AsrModelConfig = serde_json::from_value(value.get("model").cloned().ok_or_else(|| Error::Checkpoint("train config lacks a model section".into()))?)?;
        let mut m = Self::new(cfg, 0)?;
        ckpt.expect(ModuleKind::Asr, &m.digest())?;
        m.store.load_bundle(&ckpt.bundle, &["cmvn.mean", "cmvn.std"])?;
        m.cmvn = Cmvn::from_checkpoint(ckpt, "cmvn")?;
        Ok(m)
    }
}

/// Teacher-forcing decoder input and target for a label sequence.
pub(crate) fn decoder_io(labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut input = vec![SOS];
    input.extend_from_slice(labels);
    let mut target = labels.to_vec();
    target.push(EOS_ID);
    (input, target)
}
