//! WebAssembly bindings for the browser demo in `www/`.
//!
//! The page renders an utterance from a synthetic speaker, draws its log-mel
//! spectrogram, plays it back directly or through Griffin-Lim, and scores a
//! hypothesis against a reference with the edit-distance aligner.

use cascade_vc::dsp::{griffin_lim, logmel, FeatureConfig, MelSpectrogram};
use cascade_vc::eval::{edit_distance, units, EditOp, Unit};
use cascade_vc::synthcorpus::{render_utterance, Language, SpeakerProfile, DEFAULT_BASE_DURATION_MS};
use cascade_vc::TokenSequence;
use wasm_bindgen::prelude::*;

/// A rendered utterance and its features.
#[wasm_bindgen]
pub struct Utterance {
    samples: Vec<f32>,
    mel: MelSpectrogram,
    cfg: FeatureConfig,
}

#[wasm_bindgen]
impl Utterance {
    pub fn samples(&self) -> Vec<f32> {
        self.samples.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn sample_rate(&self) -> u32 {
        self.cfg.sample_rate
    }

    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> usize {
        self.mel.frames()
    }

    #[wasm_bindgen(getter)]
    pub fn n_mels(&self) -> usize {
        self.mel.n_mels()
    }

    /// Row-major `frames × n_mels` log-mel values.
    pub fn mel(&self) -> Vec<f32> {
        self.mel.values.data.clone()
    }

    /// Waveform recovered from the mel spectrogram alone.
    pub fn griffin_lim(&self, iterations: usize) -> Result<Vec<f32>, JsError> {
        reconstruct(&self.mel, &self.cfg, iterations).map_err(|e| JsError::new(&e))
    }
}

pub fn render_native(tokens: &str, language: &str, f0_hz: f64, formant_scale: f64, rate_scale: f64) -> Result<Utterance, String> {
    let language: Language = language.parse().map_err(|e: cascade_vc::Error| e.to_string())?;
    let profile = SpeakerProfile { speaker_id: "demo".into(), f0_hz, formant_scale, rate_scale, language, seed: 0 };
    profile.validate().map_err(|e| e.to_string())?;
    let tokens = TokenSequence::parse(tokens);
    if tokens.is_empty() {
        return Err("enter at least one token".into());
    }
    let w = render_utterance(&tokens, &profile, DEFAULT_BASE_DURATION_MS).map_err(|e| e.to_string())?;
    let cfg = FeatureConfig::default();
    let mel = logmel(&w, &cfg).map_err(|e| e.to_string())?;
    Ok(Utterance { samples: w.samples, mel, cfg })
}

fn reconstruct(mel: &MelSpectrogram, cfg: &FeatureConfig, iterations: usize) -> Result<Vec<f32>, String> {
    griffin_lim(mel, cfg, iterations.clamp(1, 200), 1e-10).map(|w| w.samples).map_err(|e| e.to_string())
}

/// Renders space-separated tokens with the given speaker traits.
#[wasm_bindgen]
pub fn render(tokens: &str, language: &str, f0_hz: f64, formant_scale: f64, rate_scale: f64) -> Result<Utterance, JsError> {
    render_native(tokens, language, f0_hz, formant_scale, rate_scale).map_err(|e| JsError::new(&e))
}

pub fn align_native(reference: &str, hypothesis: &str, word_level: bool) -> Result<String, String> {
    let unit = if word_level { Unit::Word } else { Unit::Char };
    let report = edit_distance(&units(reference, unit), &units(hypothesis, unit));
    let rate = report.rate().ok_or("reference is empty")?;
    let pairs: Vec<_> = report
        .pairs
        .iter()
        .map(|p| {
            let op = match p.op {
                EditOp::Match => "=",
                EditOp::Sub => "S",
                EditOp::Ins => "I",
                EditOp::Del => "D",
            };
            serde_json::json!({ "op": op, "ref": p.reference, "hyp": p.hypothesis })
        })
        .collect();
    let out = serde_json::json!({
        "rate": rate,
        "substitutions": report.substitutions,
        "deletions": report.deletions,
        "insertions": report.insertions,
        "ref_len": report.ref_len,
        "pairs": pairs,
    });
    Ok(out.to_string())
}

/// Edit-distance alignment as JSON: rate in percent, operation counts and
/// the aligned pairs.
#[wasm_bindgen]
pub fn align(reference: &str, hypothesis: &str, word_level: bool) -> Result<String, JsError> {
    align_native(reference, hypothesis, word_level).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_produces_matching_features() {
        let u = render_native("a k i", "A", 120.0, 1.0, 1.0).unwrap();
        assert_eq!(u.sample_rate(), 16000);
        assert_eq!(u.mel().len(), u.frames() * u.n_mels());
        assert!(u.samples().iter().any(|&s| s != 0.0));
        let gl = reconstruct(&u.mel, &u.cfg, 4).unwrap();
        assert!(!gl.is_empty());
    }

    #[test]
    fn render_rejects_bad_input() {
        assert!(render_native("", "A", 120.0, 1.0, 1.0).is_err());
        assert!(render_native("a", "Z", 120.0, 1.0, 1.0).is_err());
        assert!(render_native("a", "A", 20.0, 1.0, 1.0).is_err());
        assert!(render_native("a qq", "A", 120.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn align_reports_counts() {
        let v: serde_json::Value = serde_json::from_str(&align_native("kitten", "sitting", false).unwrap()).unwrap();
        assert_eq!(v["rate"], 50.0);
        assert_eq!(v["substitutions"], 2);
        assert_eq!(v["insertions"], 1);
        assert_eq!(v["pairs"].as_array().unwrap().len(), 7);
        assert!(align_native("", "a", true).is_err());
    }
}
