use serde::{Deserialize, Serialize};

use super::TtsModel;
use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use rand::Rng as _;

use crate::nn::{seeded_rng, Ctx, Mat};
use crate::TokenSequence;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub stop_threshold: f64,
    pub max_frames_per_token: usize,
    /// Keep pre-net dropout active while decoding, with masks drawn from this seed.
    pub prenet_dropout_seed: Option<u64>,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self { stop_threshold: 0.5, max_frames_per_token: 20, prenet_dropout_seed: None }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.stop_threshold > 0.0 && self.stop_threshold < 1.0) || self.max_frames_per_token == 0 {
            return Err(Error::Config("need 0 < stop_threshold < 1 and max_frames_per_token > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Synthesis {
    pub mel: MelSpectrogram,
    /// Frame at which the stop probability crossed the threshold; `None`
    /// when the frame cap ended decoding.
    pub stop_frame: Option<usize>,
}

/// Autoregressive greedy decoding followed by the post-net.
pub fn synthesize(tokens: &TokenSequence, spk: &[f32], model: &TtsModel, scfg: &SynthesisConfig) -> Result<Synthesis> {
    scfg.validate()?;
    let ids = model.cfg.token_ids(tokens)?;
    let n_mels = model.cfg.features.n_mels;
    let memory = {
        let mut ctx = Ctx::eval(&model.store);
        let m = model.encode(&mut ctx, &ids, spk, true)?;
        ctx.g.value(m).clone()
    };
    let cap = scfg.max_frames_per_token * ids.len();
    let mut prev = Mat::zeros(1, n_mels);
    let mut frames: Vec<f32> = Vec::with_capacity(cap * n_mels);
    let mut stop_frame = None;
    let mut rng = scfg.prenet_dropout_seed.map(seeded_rng);
    let pd = model.cfg.prenet_dim;
    let mut masks = [Mat::zeros(0, pd), Mat::zeros(0, pd)];
    for t in 0..cap {
        if let Some(rng) = rng.as_mut() {
            let keep = 1.0 - model.cfg.prenet_dropout;
            for m in masks.iter_mut() {
                let row: Vec<f32> = (0..pd).map(|_| if rng.random::<f64>() < keep { (1.0 / keep) as f32 } else { 0.0 }).collect();
                let mut grown = Mat::zeros(m.rows + 1, pd);
                grown.data[..m.data.len()].copy_from_slice(&m.data);
                grown.row_mut(m.rows).copy_from_slice(&row);
                *m = grown;
            }
        }
        let mut ctx = Ctx::eval(&model.store);
        let mem = ctx.g.input(memory.clone());
        let out = model.decode_masked(&mut ctx, mem, &prev, false, rng.as_ref().map(|_| &masks))?;
        let row = ctx.g.value(out.mel).row(t).to_vec();
        let stop = crate::nn::sigmoid(ctx.g.value(out.stop_logits).at(t, 0)) as f64;
        frames.extend_from_slice(&row);
        if stop > scfg.stop_threshold {
            stop_frame = Some(t);
            break;
        }
        let mut next = Mat::zeros(prev.rows + 1, n_mels);
        next.data[..prev.data.len()].copy_from_slice(&prev.data);
        next.row_mut(prev.rows).copy_from_slice(&row);
        prev = next;
    }
    let coarse = Mat::from_vec(frames.len() / n_mels, n_mels, frames);
    let refined = {
        let mut ctx = Ctx::eval(&model.store);
        let x = ctx.g.input(coarse);
        let y = model.postnet(&mut ctx, x);
        ctx.g.value(y).clone()
    };
    Ok(Synthesis { mel: MelSpectrogram { values: model.cmvn.invert(&refined), config_digest: model.cfg.features.digest() }, stop_frame })
}
