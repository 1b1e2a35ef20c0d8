use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::FeatureConfig;
use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::nn::Mat;

/// One-sided complex spectrogram, `frames × (fft_size/2 + 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
    pub config_digest: String,
}

impl Spectrogram {
    pub fn at(&self, frame: usize, bin: usize) -> Complex64 {
        self.data[frame * self.bins + bin]
    }

    pub fn scaled(&self, a: f64) -> Spectrogram {
        Spectrogram { data: self.data.iter().map(|z| z * a).collect(), ..self.clone() }
    }
}

pub fn frame_count(len: usize, hop: usize) -> usize {
    len.div_ceil(hop)
}

/// Maps a possibly out-of-range index into `0..len` by mirror reflection
/// (edge sample not repeated).
pub fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= len as isize {
        j = period - j;
    }
    j as usize
}

/// Centered frames with reflection padding of `fft_size/2`; frame `i` is
/// centred on sample `i·hop`.
pub fn stft(w: &Waveform, cfg: &FeatureConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let x: Vec<f64> = w.samples.iter().map(|&s| s as f64).collect();
    Ok(stft_f64(&x, cfg))
}

pub(crate) fn stft_f64(x: &[f64], cfg: &FeatureConfig) -> Spectrogram {
    let n = cfg.fft_size;
    let bins = cfg.n_bins();
    let frames = frame_count(x.len(), cfg.hop);
    let window = cfg.window();
    let pad = (n / 2) as isize;
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut data = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for f in 0..frames {
        let start = (f * cfg.hop) as isize - pad;
        for (k, b) in buf.iter_mut().enumerate() {
            let v = if window[k] == 0.0 { 0.0 } else { x[reflect_index(start + k as isize, x.len())] * window[k] };
            *b = Complex64::new(v, 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Spectrogram { frames, bins, data, config_digest: cfg.digest() }
}

/// Least-squares inverse of [`stft`]: windowed overlap-add, folded back
/// through the reflection padding and normalised by the summed squared
/// window. `length` defaults to `frames · hop`.
pub fn istft(spec: &Spectrogram, cfg: &FeatureConfig, length: Option<usize>) -> Result<Waveform> {
    cfg.validate()?;
    if spec.config_digest != cfg.digest() {
        return Err(Error::DigestMismatch { expected: cfg.digest(), actual: spec.config_digest.clone() });
    }
    if spec.bins != cfg.n_bins() {
        return Err(Error::Shape(format!("spectrogram has {} bins, config expects {}", spec.bins, cfg.n_bins())));
    }
    let x = istft_f64(spec, cfg, length.unwrap_or(spec.frames * cfg.hop));
    Ok(Waveform::new(x.into_iter().map(|v| v as f32).collect(), cfg.sample_rate))
}

pub(crate) fn istft_f64(spec: &Spectrogram, cfg: &FeatureConfig, len: usize) -> Vec<f64> {
    if spec.frames == 0 || len == 0 {
        return vec![0.0; len];
    }
    let n = cfg.fft_size;
    let window = cfg.window();
    let pad = (n / 2) as isize;
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let mut out = vec![0.0; len];
    let mut wsum = vec![0.0; len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for f in 0..spec.frames {
        let row = &spec.data[f * spec.bins..(f + 1) * spec.bins];
        buf[..spec.bins].copy_from_slice(row);
        for k in 1..n - spec.bins + 1 {
            buf[n - k] = row[k].conj();
        }
        ifft.process(&mut buf);
        let start = (f * cfg.hop) as isize - pad;
        for (k, b) in buf.iter().enumerate() {
            if window[k] == 0.0 {
                continue;
            }
            let j = reflect_index(start + k as isize, len);
            out[j] += b.re / n as f64 * window[k];
            wsum[j] += window[k] * window[k];
        }
    }
    for (o, &s) in out.iter_mut().zip(&wsum) {
        *o = if s > 1e-11 { *o / s } else { 0.0 };
    }
    out
}

/// `frames × bins` magnitudes.
pub fn magnitude(spec: &Spectrogram) -> Mat<f64> {
    Mat::from_vec(spec.frames, spec.bins, spec.data.iter().map(|z| z.norm()).collect())
}
