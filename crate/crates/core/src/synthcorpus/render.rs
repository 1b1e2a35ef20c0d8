use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use sha2::{Digest, Sha256};

use super::{lookup_prototype, Prototype, SpeakerProfile};
use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::tokens::TokenSequence;

pub const DEFAULT_BASE_DURATION_MS: f64 = 80.0;
const PEAK_LIMIT: f32 = 0.95;
const FADE_MS: f64 = 4.0;

/// Independent stream per utterance, so generation order never matters.
pub fn utterance_rng(seed: u64, utt_id: &str) -> rand_chacha::ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(utt_id.as_bytes());
    let d = h.finalize();
    rand_chacha::ChaCha8Rng::seed_from_u64(u64::from_le_bytes(d[..8].try_into().unwrap()))
}

/// Renders at 16 kHz with a noise stream derived from the profile seed and
/// the token string.
pub fn render_utterance(tokens: &TokenSequence, profile: &SpeakerProfile, base_duration_ms: f64) -> Result<Waveform> {
    let mut rng = utterance_rng(profile.seed, &tokens.to_string());
    render_utterance_at(tokens, profile, base_duration_ms, 16000, &mut rng)
}

pub fn render_utterance_at(tokens: &TokenSequence, profile: &SpeakerProfile, base_duration_ms: f64, sample_rate: u32, rng: &mut impl Rng) -> Result<Waveform> {
    if !(base_duration_ms > 0.0 && profile.rate_scale > 0.0 && profile.f0_hz > 0.0 && profile.formant_scale > 0.0) {
        return Err(Error::Config("durations, f0 and scales must be positive".into()));
    }
    let protos = tokens.symbols.iter().map(|s| lookup_prototype(s, profile.language).map(|p| (s.as_str(), p))).collect::<Result<Vec<_>>>()?;
    let sr = sample_rate as f64;
    let seg_len = (base_duration_ms * profile.rate_scale * sr / 1000.0).round() as usize;
    let mut out = Vec::with_capacity(seg_len * protos.len());
    let mut phase = 0.0;
    for (symbol, proto) in protos {
        let seg = if proto.voiced {
            let s = harmonic_source(profile.f0_hz, sr, seg_len, &mut phase);
            let s = formant_filter(&s, &proto, profile.formant_scale, sr, [60.0, 90.0, 120.0]);
            normalise_rms(s, if is_nasal(symbol) { 0.06 } else { 0.12 })
        } else {
            let onset = if symbol == "s" { 0 } else { (0.2 * seg_len as f64) as usize };
            let mut s = vec![0.0; seg_len];
            for (n, v) in s.iter_mut().enumerate().skip(onset) {
                let decay = if onset > 0 { (-((n - onset) as f64) / (0.25 * seg_len as f64)).exp() } else { 1.0 };
                *v = rng.random_range(-1.0..1.0) * decay;
            }
            let s = formant_filter(&s, &proto, profile.formant_scale, sr, [250.0, 350.0, 450.0]);
            normalise_rms(s, if onset > 0 { 0.05 } else { 0.04 })
        };
        out.extend(faded(seg, (FADE_MS * sr / 1000.0) as usize));
    }
    let mut samples: Vec<f32> = out.into_iter().map(|v| v as f32).collect();
    let peak = samples.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if peak > PEAK_LIMIT {
        let g = PEAK_LIMIT / peak;
        samples.iter_mut().for_each(|v| *v *= g);
    }
    Ok(Waveform::new(samples, sample_rate))
}

fn is_nasal(symbol: &str) -> bool {
    matches!(symbol, "m" | "n")
}

/// Equal-amplitude harmonics of `f0` up to 0.45·sr, via the closed-form
/// Dirichlet sum. `phase` carries across segments.
fn harmonic_source(f0: f64, sr: f64, len: usize, phase: &mut f64) -> Vec<f64> {
    let h = ((0.45 * sr / f0).floor() as usize).max(1) as f64;
    let dphi = 2.0 * PI * f0 / sr;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let th = *phase;
        let half = (th / 2.0).sin();
        let v = if half.abs() < 1e-9 { h } else { ((h + 0.5) * th).sin() / (2.0 * half) - 0.5 };
        out.push(v / h);
        *phase = (*phase + dphi) % (2.0 * PI);
    }
    out
}

fn formant_filter(x: &[f64], proto: &Prototype, scale: f64, sr: f64, bandwidths: [f64; 3]) -> Vec<f64> {
    let mut y = x.to_vec();
    for (f, bw) in proto.formants.iter().zip(bandwidths) {
        let fc = f * scale;
        if fc >= 0.48 * sr {
            continue;
        }
        let r = (-PI * bw / sr).exp();
        let a1 = 2.0 * r * (2.0 * PI * fc / sr).cos();
        let a2 = -r * r;
        let (mut y1, mut y2) = (0.0, 0.0);
        for v in y.iter_mut() {
            let o = (1.0 - r) * *v + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = o;
            *v = o;
        }
    }
    y
}

fn normalise_rms(x: Vec<f64>, target: f64) -> Vec<f64> {
    let active: Vec<&f64> = x.iter().filter(|v| **v != 0.0).collect();
    if active.is_empty() {
        return x;
    }
    let rms = (active.iter().map(|v| *v * *v).sum::<f64>() / active.len() as f64).sqrt();
    x.into_iter().map(|v| v * target / rms).collect()
}

fn faded(mut x: Vec<f64>, fade: usize) -> Vec<f64> {
    let n = x.len();
    let fade = fade.min(n / 2);
    for i in 0..fade {
        let g = 0.5 - 0.5 * (PI * i as f64 / fade as f64).cos();
        x[i] *= g;
        x[n - 1 - i] *= g;
    }
    x
}
