use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::render::{render_utterance_at, utterance_rng, DEFAULT_BASE_DURATION_MS};
use super::{make_speaker_profile, random_tokens, Language, SpeakerProfile};
use crate::audio::write_wav;
use crate::error::{Error, Result};
use crate::manifest::{CorpusManifest, ManifestRecord};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SPEAKERS_FILE: &str = "speakers.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub speakers: Speakers,
    pub utterances_per_speaker: usize,
    pub tokens_per_utterance: TokenCount,
    pub seed: u64,
    #[serde(default = "default_base_duration")]
    pub base_duration_ms: f64,
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
}

fn default_base_duration() -> f64 {
    DEFAULT_BASE_DURATION_MS
}

fn default_rate() -> u32 {
    16000
}

/// Either a count (languages alternate A, B, …; traits drawn from derived
/// seeds) or an explicit list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Speakers {
    Count(usize),
    List(Vec<SpeakerSpec>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeakerSpec {
    pub id: String,
    pub language: Language,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub f0_hz: Option<f64>,
    #[serde(default)]
    pub formant_scale: Option<f64>,
    #[serde(default)]
    pub rate_scale: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TokenCount {
    Fixed(usize),
    Range { min: usize, max: usize },
}

impl TokenCount {
    fn bounds(self) -> (usize, usize) {
        match self {
            TokenCount::Fixed(n) => (n, n),
            TokenCount::Range { min, max } => (min, max),
        }
    }
}

impl CorpusSpec {
    pub fn profiles(&self) -> Result<Vec<SpeakerProfile>> {
        let derived = |i: usize| self.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let profiles: Vec<SpeakerProfile> = match &self.speakers {
            Speakers::Count(n) => (0..*n)
                .map(|i| {
                    let lang = if i % 2 == 0 { Language::A } else { Language::B };
                    SpeakerProfile { speaker_id: format!("spk{i:02}"), ..make_speaker_profile(derived(i), lang) }
                })
                .collect(),
            Speakers::List(list) => list
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let base = make_speaker_profile(s.seed.unwrap_or_else(|| derived(i)), s.language);
                    SpeakerProfile {
                        speaker_id: s.id.clone(),
                        f0_hz: s.f0_hz.unwrap_or(base.f0_hz),
                        formant_scale: s.formant_scale.unwrap_or(base.formant_scale),
                        rate_scale: s.rate_scale.unwrap_or(base.rate_scale),
                        ..base
                    }
                })
                .collect(),
        };
        let mut ids = HashSet::new();
        for p in &profiles {
            p.validate()?;
            if p.speaker_id.is_empty() || !p.speaker_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(Error::Config(format!("speaker id {:?} must be non-empty [A-Za-z0-9_-]", p.speaker_id)));
            }
            if !ids.insert(p.speaker_id.clone()) {
                return Err(Error::Config(format!("duplicate speaker id {}", p.speaker_id)));
            }
        }
        Ok(profiles)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.tokens_per_utterance.bounds();
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("tokens_per_utterance must satisfy 1 <= min <= max (got {lo}..{hi})")));
        }
        if !matches!(self.sample_rate, 16000 | 24000) {
            return Err(Error::Config(format!("sample_rate must be 16000 or 24000, got {}", self.sample_rate)));
        }
        if self.base_duration_ms <= 0.0 {
            return Err(Error::Config("base_duration_ms must be positive".into()));
        }
        self.profiles().map(|_| ())
    }
}

/// Writes `wav/<utt_id>.wav`, `manifest.jsonl` and `speakers.json` under
/// `out_dir`. Every utterance draws tokens and noise from its own stream.
pub fn generate_corpus(spec: &CorpusSpec, out_dir: impl AsRef<Path>) -> Result<CorpusManifest> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let profiles = spec.profiles()?;
    let (lo, hi) = spec.tokens_per_utterance.bounds();
    let mut records = Vec::new();
    for p in &profiles {
        for u in 0..spec.utterances_per_speaker {
            let utt_id = format!("{}_{u:03}", p.speaker_id);
            let mut rng = utterance_rng(spec.seed, &utt_id);
            let n = rng.random_range(lo..=hi);
            let tokens = random_tokens(&mut rng, p.language, n);
            let w = render_utterance_at(&tokens, p, spec.base_duration_ms, spec.sample_rate, &mut rng)?;
            let rel = format!("wav/{utt_id}.wav");
            write_wav(out_dir.join(&rel), &w)?;
            records.push(ManifestRecord {
                utt_id,
                speaker_id: p.speaker_id.clone(),
                language: p.language,
                token_string: tokens.to_string(),
                audio_path: rel,
                sample_rate: spec.sample_rate,
                duration_sec: w.duration_sec(),
            });
        }
    }
    let manifest = CorpusManifest::new(records, out_dir);
    manifest.write(out_dir.join(MANIFEST_FILE))?;
    let speakers = serde_json::to_string_pretty(&profiles)?;
    std::fs::write(out_dir.join(SPEAKERS_FILE), speakers + "\n").map_err(|e| Error::io(out_dir.join(SPEAKERS_FILE), e))?;
    Ok(manifest)
}

pub fn read_profiles(path: impl AsRef<Path>) -> Result<Vec<SpeakerProfile>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parses_from_toml() {
        let spec: CorpusSpec = toml::from_str(
            r#"
            speakers = 3
            utterances_per_speaker = 2
            tokens_per_utterance = { min = 2, max = 4 }
            seed = 5
            "#,
        )
        .unwrap();
        assert_eq!(spec.speakers, Speakers::Count(3));
        assert_eq!(spec.base_duration_ms, 80.0);
        let langs: Vec<Language> = spec.profiles().unwrap().iter().map(|p| p.language).collect();
        assert_eq!(langs, vec![Language::A, Language::B, Language::A]);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let ok = CorpusSpec { speakers: Speakers::Count(1), utterances_per_speaker: 1, tokens_per_utterance: TokenCount::Fixed(3), seed: 0, base_duration_ms: 80.0, sample_rate: 16000 };
        ok.validate().unwrap();
        assert!(CorpusSpec { tokens_per_utterance: TokenCount::Fixed(0), ..ok.clone() }.validate().is_err());
        assert!(CorpusSpec { tokens_per_utterance: TokenCount::Range { min: 4, max: 2 }, ..ok.clone() }.validate().is_err());
        assert!(CorpusSpec { sample_rate: 22050, ..ok.clone() }.validate().is_err());
        let bad_f0 = SpeakerSpec { id: "x".into(), language: Language::A, seed: None, f0_hz: Some(500.0), formant_scale: None, rate_scale: None };
        assert!(CorpusSpec { speakers: Speakers::List(vec![bad_f0]), ..ok }.validate().is_err());
    }
}
