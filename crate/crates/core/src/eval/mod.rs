//! Objective evaluation: error rates, intelligibility tables, an
//! embedding-based conversion-similarity proxy and listening-test
//! aggregation.

mod align;
mod ratings;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use align::{cer_wer, edit_distance, units, AlignedPair, AlignmentReport, EditOp, Unit};
pub use ratings::{aggregate_ratings, ratings_text, Rating, RatingScale, RatingsTable, SystemScore, RATINGS_HEADER};

use crate::asr::{recognize, AsrModel, DecodeConfig, NgramLm};
use crate::audio::read_wav;
use crate::error::{Error, Result};
use crate::spkemb::{extract_embedding, similarity, SpkembModel};
use crate::{TokenSequence, Waveform};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    /// Unconverted source speech.
    Input,
    Converted,
}

/// One utterance to score. `audio` may point at a file that does not exist.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub utt_id: String,
    pub source_speaker: String,
    pub condition: Condition,
    pub audio: PathBuf,
    pub reference: TokenSequence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceScore {
    pub utt_id: String,
    pub source_speaker: String,
    pub condition: Condition,
    pub hypothesis: Option<TokenSequence>,
    pub cer: Option<f64>,
    pub wer: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub n: usize,
    pub cer: f64,
    pub wer: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntelligibilityRow {
    pub source_speaker: String,
    pub input: Option<Cell>,
    pub converted: Option<Cell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntelligibilityReport {
    pub rows: Vec<IntelligibilityRow>,
    pub missing: Vec<String>,
    pub utterances: Vec<UtteranceScore>,
}

impl IntelligibilityReport {
    pub fn to_text(&self) -> String {
        let mut s = format!("{:<12} {:>16} {:>16}\n{:<12} {:>8}{:>8} {:>8}{:>8}\n", "source", "input", "converted", "", "CER", "WER", "CER", "WER");
        let cell = |c: &Option<Cell>| c.as_ref().map_or(format!("{:>8}{:>8}", "-", "-"), |c| format!("{:>8.1}{:>8.1}", c.cer, c.wer));
        for r in &self.rows {
            s += &format!("{:<12} {} {}\n", r.source_speaker, cell(&r.input), cell(&r.converted));
        }
        if !self.missing.is_empty() {
            s += &format!("missing audio: {} utterance(s) excluded\n", self.missing.len());
        }
        s
    }

    /// Mean over utterances of one condition, all speakers pooled.
    pub fn overall(&self, condition: Condition) -> Option<Cell> {
        mean_cell(self.utterances.iter().filter(|u| u.condition == condition))
    }
}

fn mean_cell<'a>(it: impl Iterator<Item = &'a UtteranceScore>) -> Option<Cell> {
    let (mut n, mut c, mut w) = (0usize, 0.0, 0.0);
    for u in it {
        if let (Some(cer), Some(wer)) = (u.cer, u.wer) {
            n += 1;
            c += cer;
            w += wer;
        }
    }
    (n > 0).then(|| Cell { n, cer: c / n as f64, wer: w / n as f64 })
}

/// Recognises every item and averages CER/WER per source speaker and
/// condition. Items whose audio is missing are listed and left out.
pub fn intelligibility_report(items: &[ScoredItem], asr: &AsrModel, dcfg: &DecodeConfig, lm: Option<&NgramLm>) -> Result<IntelligibilityReport> {
    let mut utterances = Vec::with_capacity(items.len());
    let mut missing = Vec::new();
    for it in items {
        if !it.audio.is_file() {
            missing.push(it.utt_id.clone());
            utterances.push(UtteranceScore { utt_id: it.utt_id.clone(), source_speaker: it.source_speaker.clone(), condition: it.condition, hypothesis: None, cer: None, wer: None });
            continue;
        }
        let w = read_wav(&it.audio)?;
        let hyp = recognize(&w, asr, dcfg, lm)?.tokens;
        let reference = it.reference.to_string();
        let h = hyp.to_string();
        let cer = cer_wer(&reference, &h, Unit::Char).map_err(|e| Error::Invalid(format!("{}: {e}", it.utt_id)))?;
        let wer = cer_wer(&reference, &h, Unit::Word)?;
        utterances.push(UtteranceScore { utt_id: it.utt_id.clone(), source_speaker: it.source_speaker.clone(), condition: it.condition, hypothesis: Some(hyp), cer: Some(cer), wer: Some(wer) });
    }
    let mut speakers: BTreeMap<&str, ()> = BTreeMap::new();
    for u in &utterances {
        speakers.insert(&u.source_speaker, ());
    }
    let rows = speakers
        .keys()
        .map(|s| {
            let of = |c: Condition| mean_cell(utterances.iter().filter(|u| u.source_speaker == *s && u.condition == c));
            IntelligibilityRow { source_speaker: s.to_string(), input: of(Condition::Input), converted: of(Condition::Converted) }
        })
        .collect();
    Ok(IntelligibilityReport { rows, missing, utterances })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub n: usize,
    pub percent_closer_to_target: f64,
    pub mean_cos_target: f64,
    pub mean_cos_source: f64,
}

impl SimilarityReport {
    pub fn to_text(&self) -> String {
        format!(
            "utterances {}\ncloser to target {:.1}%\nmean cosine to target {:.4}\nmean cosine to source {:.4}\n",
            self.n, self.percent_closer_to_target, self.mean_cos_target, self.mean_cos_source
        )
    }
}

/// Fraction of `converted` utterances whose embedding is closer (cosine)
/// to the target enrollment centroid than to the source one.
pub fn conversion_similarity(converted: &[Waveform], target: &[Waveform], source: &[Waveform], model: &SpkembModel) -> Result<SimilarityReport> {
    if converted.is_empty() || target.is_empty() || source.is_empty() {
        return Err(Error::Invalid("conversion similarity needs non-empty converted, target and source sets".into()));
    }
    let t = extract_embedding(target, model)?;
    let s = extract_embedding(source, model)?;
    let (mut closer, mut ct, mut cs) = (0usize, 0.0, 0.0);
    for w in converted {
        let e = model.embed_waveform(w)?;
        let a = similarity(&e, &t.vector)?;
        let b = similarity(&e, &s.vector)?;
        if a > b {
            closer += 1;
        }
        ct += a;
        cs += b;
    }
    let n = converted.len();
    Ok(SimilarityReport { n, percent_closer_to_target: 100.0 * closer as f64 / n as f64, mean_cos_target: ct / n as f64, mean_cos_source: cs / n as f64 })
}
