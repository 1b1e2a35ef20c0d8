//! The conversion cascade: recognise the source utterance, synthesise the
//! recognised tokens in the target voice, vocode. Also the model registry
//! and the end-to-end experiment runner.

mod experiment;
mod registry;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use experiment::{run_experiment, Criterion, ExperimentReport, ExperimentSpec, RunOptions};
pub use registry::{file_digest, validate_registry, EntryCheck, ModelRegistry, RegistryEntry, RegistryReport, Role};

use crate::asr::{recognize, AsrModel, DecodeConfig, NgramLm};
use crate::audio::write_wav;
use crate::dsp::{write_features, MelSpectrogram};
use crate::error::{Error, Result};
use crate::nn::Checkpoint;
use crate::spkemb::SpeakerEmbedding;
use crate::tts::{synthesize, SynthesisConfig, TtsModel};
use crate::vocoder::{vocode_with_seed, Vocoder};
use crate::{TokenSequence, Waveform};

pub struct Voice {
    pub tts: TtsModel,
    pub embedding: SpeakerEmbedding,
    pub vocoder: String,
}

/// Every model named by a registry, loaded once and shared read-only.
pub struct Cascade {
    pub asr: AsrModel,
    pub lm: Option<NgramLm>,
    pub voices: BTreeMap<String, Voice>,
    pub vocoders: BTreeMap<String, Vocoder>,
}

impl Cascade {
    /// Fails with a `registry` stage error unless the registry validates
    /// and has an ASR model and at least one voice and vocoder.
    pub fn load(reg: &ModelRegistry) -> Result<Self> {
        Self::load_inner(reg).map_err(|e| e.in_stage("registry"))
    }

    fn load_inner(reg: &ModelRegistry) -> Result<Self> {
        let report = validate_registry(reg);
        if !report.is_valid() {
            let bad: Vec<String> = report.entries.iter().filter(|e| !e.ok).map(|e| format!("{}: {}", e.role, e.message)).collect();
            return Err(Error::Invalid(bad.join("; ")));
        }
        let ckpt = |e: &RegistryEntry| Checkpoint::load(reg.resolve(&e.path));
        let asr_entry = reg.get(&Role::Asr).ok_or_else(|| Error::Invalid("registry has no asr entry".into()))?;
        let asr = AsrModel::from_checkpoint(&ckpt(asr_entry)?)?;
        let lm = reg.get(&Role::Lm).map(|e| NgramLm::load(reg.resolve(&e.path))).transpose()?;
        let mut vocoders = BTreeMap::new();
        let mut voices = BTreeMap::new();
        for (name, e) in &reg.entries {
            match name.parse::<Role>()? {
                Role::Vocoder(g) => {
                    vocoders.insert(g, Vocoder::from_checkpoint(&ckpt(e)?)?);
                }
                Role::Tts(spk) => {
                    let emb = e.embedding.as_ref().ok_or_else(|| Error::Invalid(format!("tts:{spk} has no embedding")))?;
                    voices.insert(
                        spk,
                        Voice { tts: TtsModel::from_checkpoint(&ckpt(e)?)?, embedding: SpeakerEmbedding::load(reg.resolve(emb))?, vocoder: e.vocoder.clone().unwrap_or_default() },
                    );
                }
                _ => {}
            }
        }
        if vocoders.is_empty() || voices.is_empty() {
            return Err(Error::Invalid("registry needs at least one tts voice and one vocoder".into()));
        }
        for (spk, v) in voices.iter_mut() {
            if v.vocoder.is_empty() {
                if vocoders.len() != 1 {
                    return Err(Error::Invalid(format!("tts:{spk} must name its vocoder group")));
                }
                v.vocoder = vocoders.keys().next().cloned().unwrap_or_default();
            } else if !vocoders.contains_key(&v.vocoder) {
                return Err(Error::Invalid(format!("tts:{spk} refers to missing vocoder group {}", v.vocoder)));
            }
        }
        Ok(Self { asr, lm, voices, vocoders })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvertConfig {
    pub decode: DecodeConfig,
    pub synthesis: SynthesisConfig,
    pub vocoder_seed: u64,
    /// Also write `<stem>.tokens.txt` and `<stem>.mel.bin`.
    pub keep_intermediates: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub asr_ms: f64,
    pub tts_ms: f64,
    pub vocoder_ms: f64,
}

impl StageTimings {
    pub fn total_ms(&self) -> f64 {
        self.asr_ms + self.tts_ms + self.vocoder_ms
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConversionResult {
    pub source_utt_id: String,
    pub target_speaker: String,
    pub tokens: TokenSequence,
    pub mel: MelSpectrogram,
    pub waveform_path: PathBuf,
    pub timings: StageTimings,
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

/// Converts `source` into the voice of `target`, writing
/// `<out_dir>/<utt_id>_to_<target>.wav` once every stage has succeeded.
pub fn convert(source: &Waveform, utt_id: &str, target: &str, cascade: &Cascade, cfg: &ConvertConfig, out_dir: &Path) -> Result<ConversionResult> {
    let stem = out_dir.join(format!("{utt_id}_to_{target}"));
    let t = Instant::now();
    let tokens = recognize(source, &cascade.asr, &cfg.decode, cascade.lm.as_ref()).map_err(|e| e.in_stage("asr"))?.tokens;
    if cfg.keep_intermediates {
        write_text(&stem.with_extension("tokens.txt"), &format!("{tokens}\n")).map_err(|e| e.in_stage("asr"))?;
    }
    let asr_ms = elapsed_ms(t);

    let t = Instant::now();
    let voice = cascade.voices.get(target).ok_or_else(|| Error::Invalid(format!("no voice registered for {target:?}")).in_stage("tts"))?;
    let mel = synthesize(&tokens, &voice.embedding.vector, &voice.tts, &cfg.synthesis).map_err(|e| e.in_stage("tts"))?.mel;
    if cfg.keep_intermediates {
        write_features(stem.with_extension("mel.bin"), &mel).map_err(|e| e.in_stage("tts"))?;
    }
    let tts_ms = elapsed_ms(t);

    let t = Instant::now();
    let vocoder = &cascade.vocoders[&voice.vocoder];
    let waveform_path = stem.with_extension("wav");
    vocode_with_seed(&mel, vocoder, cfg.vocoder_seed).and_then(|w| write_wav(&waveform_path, &w)).map_err(|e| e.in_stage("vocoder"))?;
    let vocoder_ms = elapsed_ms(t);

    Ok(ConversionResult {
        source_utt_id: utt_id.to_string(),
        target_speaker: target.to_string(),
        tokens,
        mel,
        waveform_path,
        timings: StageTimings { asr_ms, tts_ms, vocoder_ms },
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
