#![allow(dead_code)]

/// Autocorrelation pitch estimate in Hz: the first normalised-autocorrelation
/// peak within 90% of the global maximum over lags for `fmin..fmax`, refined
/// by parabolic interpolation.
pub fn pitch_hz(x: &[f32], sr: u32, fmin: f64, fmax: f64) -> f64 {
    let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let mean = x.iter().sum::<f64>() / x.len().max(1) as f64;
    let x: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let min_lag = (sr as f64 / fmax).floor().max(1.0) as usize;
    let max_lag = ((sr as f64 / fmin).ceil() as usize).min(x.len() / 2);
    let r0: f64 = x.iter().map(|v| v * v).sum();
    let r: Vec<f64> = (0..=max_lag + 1)
        .map(|lag| {
            let n = x.len() - lag;
            x[..n].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum::<f64>() / r0 * x.len() as f64 / n as f64
        })
        .collect();
    let best = (min_lag..=max_lag).map(|l| r[l]).fold(f64::MIN, f64::max);
    let lag = (min_lag..=max_lag).find(|&l| r[l] >= 0.9 * best && r[l] >= r[l - 1] && r[l] >= r[l + 1]).unwrap_or(min_lag);
    let (a, b, c) = (r[lag - 1], r[lag], r[lag + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 1e-12 { 0.5 * (a - c) / denom } else { 0.0 };
    sr as f64 / (lag as f64 + shift)
}

pub fn sine(freq: f64, sr: u32, len: usize, amp: f64) -> Vec<f32> {
    (0..len).map(|n| (amp * (2.0 * std::f64::consts::PI * freq * n as f64 / sr as f64).sin()) as f32).collect()
}

pub fn snr_db(reference: &[f32], estimate: &[f32]) -> f64 {
    let sig: f64 = reference.iter().map(|&v| (v as f64).powi(2)).sum();
    let noise: f64 = reference.iter().zip(estimate).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
    10.0 * (sig / noise.max(1e-300)).log10()
}

use cascade_vc::synthcorpus::{generate_corpus, CorpusSpec, Speakers, TokenCount};
use cascade_vc::CorpusManifest;

pub fn small_corpus(dir: &std::path::Path, speakers: usize, utts: usize, seed: u64) -> CorpusManifest {
    let spec = CorpusSpec {
        speakers: Speakers::Count(speakers),
        utterances_per_speaker: utts,
        tokens_per_utterance: TokenCount::Range { min: 3, max: 6 },
        seed,
        base_duration_ms: 80.0,
        sample_rate: 16000,
    };
    generate_corpus(&spec, dir).unwrap()
}

/// Plain recursive Levenshtein distance.
pub fn brute_edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = brute_edit_distance(ra, rb) + usize::from(x != y);
            let del = brute_edit_distance(ra, b) + 1;
            let ins = brute_edit_distance(a, rb) + 1;
            sub.min(del).min(ins)
        }
    }
}
