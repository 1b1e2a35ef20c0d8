use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rand::{Rng, SeedableRng};

use super::mel::mel_filterbank;
use super::stft::{istft_f64, stft_f64, Spectrogram};
use super::{FeatureConfig, MelSpectrogram};
use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::nn::Mat;

/// Linear magnitudes (`frames × bins`) from log-mel via the filterbank
/// pseudo-inverse. Recovered power below `pinv_clip` is raised to it;
/// mel entries at the log floor count as zero energy.
pub fn mel_to_linear_magnitude(mel: &MelSpectrogram, cfg: &FeatureConfig, pinv_clip: f64) -> Result<Mat<f64>> {
    cfg.validate()?;
    mel.check_digest(cfg)?;
    if pinv_clip < 0.0 {
        return Err(Error::Config("pinv_clip must be >= 0".into()));
    }
    let fb = mel_filterbank(cfg);
    let m = DMatrix::from_row_slice(fb.rows, fb.cols, &fb.data);
    let pinv = m.pseudo_inverse(1e-10).map_err(|e| Error::Invalid(format!("filterbank pseudo-inverse: {e}")))?;
    let floor = cfg.log_floor.ln();
    let frames = mel.frames();
    let bins = cfg.n_bins();
    let mut out = Mat::zeros(frames, bins);
    for f in 0..frames {
        let p: Vec<f64> = mel.values.row(f).iter().map(|&v| if (v as f64) <= floor + 1e-6 { 0.0 } else { (v as f64).exp() }).collect();
        let silent = p.iter().all(|&v| v == 0.0);
        for k in 0..bins {
            let lin: f64 = if silent { 0.0 } else { (0..p.len()).map(|j| pinv[(k, j)] * p[j]).sum::<f64>().max(pinv_clip) };
            *out.at_mut(f, k) = lin.max(0.0).sqrt();
        }
    }
    Ok(out)
}

/// Griffin-Lim phase reconstruction from a log-mel spectrogram.
pub fn griffin_lim(mel: &MelSpectrogram, cfg: &FeatureConfig, iterations: usize, pinv_clip: f64) -> Result<Waveform> {
    griffin_lim_traced(mel, cfg, iterations, pinv_clip).map(|(w, _)| w)
}

/// As [`griffin_lim`], also returning the spectral convergence
/// `‖|STFT(x)| − A‖_F / ‖A‖_F` after every iteration.
pub fn griffin_lim_traced(mel: &MelSpectrogram, cfg: &FeatureConfig, iterations: usize, pinv_clip: f64) -> Result<(Waveform, Vec<f64>)> {
    if iterations == 0 {
        return Err(Error::Config("griffin_lim needs at least one iteration".into()));
    }
    let target = mel_to_linear_magnitude(mel, cfg, pinv_clip)?;
    let len = target.rows * cfg.hop;
    let norm_a = target.data.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut spec = Spectrogram {
        frames: target.rows,
        bins: target.cols,
        data: target.data.iter().map(|&a| Complex64::from_polar(a, rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))).collect(),
        config_digest: cfg.digest(),
    };
    let mut trace = Vec::with_capacity(iterations);
    let mut x = vec![0.0; len];
    for _ in 0..iterations {
        x = istft_f64(&spec, cfg, len);
        let est = stft_f64(&x, cfg);
        let mut err = 0.0;
        for (i, (z, &a)) in est.data.iter().zip(&target.data).enumerate() {
            let mag = z.norm();
            err += (mag - a) * (mag - a);
            spec.data[i] = if mag > 1e-12 { z * (a / mag) } else { Complex64::new(a, 0.0) };
        }
        trace.push(if norm_a > 0.0 { err.sqrt() / norm_a } else { 0.0 });
    }
    Ok((Waveform::new(x.into_iter().map(|v| v as f32).collect(), cfg.sample_rate), trace))
}
