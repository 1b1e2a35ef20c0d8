use std::ops::Range;

use super::render::render_utterance;
use super::{inventory, SpeakerProfile};
use crate::dsp::{logmel, FeatureConfig, MelSpectrogram};
use crate::error::{Error, Result};
use crate::tokens::TokenSequence;

/// Splits `frames` into `n` contiguous, near-equal ranges.
pub fn segment_equal(frames: usize, n: usize) -> Vec<Range<usize>> {
    (0..n).map(|i| (i * frames / n)..((i + 1) * frames / n)).collect()
}

/// Nearest-centroid token classifier over log-mel frames, with one
/// prototype per symbol rendered in isolation for a given speaker.
#[derive(Clone, Debug)]
pub struct PrototypeClassifier {
    pub symbols: Vec<String>,
    centroids: Vec<Vec<f64>>,
}

fn centroid(mel: &MelSpectrogram, range: Range<usize>) -> Vec<f64> {
    // Boundary frames straddle neighbouring tokens.
    let r = if range.len() >= 4 { range.start + 1..range.end - 1 } else { range };
    let mut c = vec![0.0; mel.n_mels()];
    for f in r.clone() {
        for (acc, &v) in c.iter_mut().zip(mel.values.row(f)) {
            *acc += v as f64;
        }
    }
    let n = r.len().max(1) as f64;
    c.iter_mut().for_each(|v| *v /= n);
    c
}

impl PrototypeClassifier {
    pub fn for_speaker(profile: &SpeakerProfile, cfg: &FeatureConfig, base_duration_ms: f64) -> Result<Self> {
        let inv = inventory(profile.language);
        let mut centroids = Vec::new();
        for s in &inv.symbols {
            let w = render_utterance(&TokenSequence::new([s.as_str()]), profile, base_duration_ms)?;
            let mel = logmel(&w, cfg)?;
            centroids.push(centroid(&mel, 0..mel.frames()));
        }
        Ok(Self { symbols: inv.symbols, centroids })
    }

    /// Keeps only the listed symbols as candidates.
    pub fn restricted(&self, symbols: &[&str]) -> Result<Self> {
        let mut out = Self { symbols: Vec::new(), centroids: Vec::new() };
        for &s in symbols {
            let i = self.symbols.iter().position(|x| x == s).ok_or_else(|| Error::UnknownToken(s.to_string()))?;
            out.symbols.push(self.symbols[i].clone());
            out.centroids.push(self.centroids[i].clone());
        }
        Ok(out)
    }

    pub fn classify_range(&self, mel: &MelSpectrogram, range: Range<usize>) -> &str {
        let c = centroid(mel, range);
        let dist = |p: &Vec<f64>| p.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let best = (0..self.centroids.len()).min_by(|&a, &b| dist(&self.centroids[a]).total_cmp(&dist(&self.centroids[b]))).expect("classifier has symbols");
        &self.symbols[best]
    }

    /// Labels each of `n` equal segments of `mel`.
    pub fn classify_segments(&self, mel: &MelSpectrogram, n: usize) -> TokenSequence {
        if n == 0 || mel.frames() == 0 {
            return TokenSequence::default();
        }
        TokenSequence::new(segment_equal(mel.frames(), n).into_iter().map(|r| self.classify_range(mel, r).to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_segments_cover_frames() {
        let s = segment_equal(10, 3);
        assert_eq!(s, vec![0..3, 3..6, 6..10]);
        assert_eq!(segment_equal(5, 0), vec![]);
    }
}
