use super::stft::stft_f64;
use super::{FeatureConfig, MelSpectrogram};
use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::nn::Mat;

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters, `n_mels × (fft_size/2 + 1)`, unnormalised (peak 1).
/// A filter too narrow to contain any FFT bin gets unit weight on the bin
/// nearest its centre so every row stays non-zero.
pub fn mel_filterbank(cfg: &FeatureConfig) -> Mat<f64> {
    let bins = cfg.n_bins();
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let edges: Vec<f64> = (0..cfg.n_mels + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64)).collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
    let mut fb = Mat::zeros(cfg.n_mels, bins);
    for m in 0..cfg.n_mels {
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let w = if f > l && f <= c {
                (f - l) / (c - l)
            } else if f > c && f < r {
                (r - f) / (r - c)
            } else {
                0.0
            };
            *fb.at_mut(m, k) = w;
        }
        if fb.row(m).iter().all(|&w| w == 0.0) {
            let k = ((c / bin_hz).round() as usize).min(bins - 1);
            *fb.at_mut(m, k) = 1.0;
        }
    }
    fb
}

/// `log(max(filterbank · power, floor))` for a `frames × bins` power matrix.
pub fn mel_from_power(power: &Mat<f64>, cfg: &FeatureConfig) -> Result<MelSpectrogram> {
    let fb = mel_filterbank(cfg);
    if power.cols != fb.cols {
        return Err(Error::Shape(format!("power spectrum has {} bins, filterbank expects {}", power.cols, fb.cols)));
    }
    let mel = power.matmul(&fb.transpose());
    let floor = cfg.log_floor;
    let values = Mat::from_vec(mel.rows, mel.cols, mel.data.iter().map(|&v| v.max(floor).ln() as f32).collect());
    Ok(MelSpectrogram { values, config_digest: cfg.digest() })
}

/// Log-mel features of a waveform recorded at the configured rate.
pub fn logmel(w: &Waveform, cfg: &FeatureConfig) -> Result<MelSpectrogram> {
    cfg.validate()?;
    if w.sample_rate != cfg.sample_rate {
        return Err(Error::SampleRate { expected: cfg.sample_rate, actual: w.sample_rate });
    }
    let x: Vec<f64> = w.samples.iter().map(|&s| s as f64).collect();
    let spec = stft_f64(&x, cfg);
    let power = Mat::from_vec(spec.frames, spec.bins, spec.data.iter().map(|z| z.norm_sqr()).collect());
    mel_from_power(&power, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_round_trips() {
        for f in [0.0, 80.0, 1000.0, 7600.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn silence_sits_at_floor() {
        let cfg = FeatureConfig::default();
        let mel = logmel(&Waveform::new(vec![0.0; 1600], 16000), &cfg).unwrap();
        let floor = (cfg.log_floor.ln()) as f32;
        assert_eq!(mel.frames(), 10);
        assert!(mel.values.data.iter().all(|&v| v == floor));
    }

    #[test]
    fn wrong_rate_is_rejected() {
        let cfg = FeatureConfig::default();
        let err = logmel(&Waveform::new(vec![0.0; 10], 24000), &cfg).unwrap_err();
        assert!(matches!(err, Error::SampleRate { expected: 16000, actual: 24000 }));
    }
}
