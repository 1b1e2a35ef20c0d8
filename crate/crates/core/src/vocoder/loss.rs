use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::{reflect_index, FeatureConfig};
use crate::error::{Error, Result};
use crate::Waveform;

/// Magnitudes below this are clamped inside the log term.
pub const LOG_MAG_FLOOR: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftResolution {
    pub fft_size: usize,
    pub hop: usize,
    pub win_length: usize,
}

pub fn default_resolutions() -> Vec<StftResolution> {
    [(512, 128, 400), (256, 64, 200), (128, 32, 80)].into_iter().map(|(fft_size, hop, win_length)| StftResolution { fft_size, hop, win_length }).collect()
}

pub fn validate_resolutions(res: &[StftResolution]) -> Result<()> {
    let mut distinct = res.to_vec();
    distinct.sort_by_key(|r| (r.fft_size, r.hop, r.win_length));
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Config("need at least two distinct STFT resolutions".into()));
    }
    for r in res {
        if r.hop == 0 || r.hop > r.win_length || r.win_length > r.fft_size {
            return Err(Error::Config(format!("bad STFT resolution {r:?}")));
        }
    }
    Ok(())
}

struct Frames {
    n: usize,
    hop: usize,
    window: Vec<f64>,
    spec: Vec<Vec<Complex64>>,
}

fn analyse(x: &[f64], r: &StftResolution, planner: &mut FftPlanner<f64>) -> Frames {
    let cfg = FeatureConfig::analysis(16000, r.fft_size, r.hop, r.win_length);
    let window = cfg.window();
    let n = r.fft_size;
    let fft = planner.plan_fft_forward(n);
    let pad = (n / 2) as isize;
    let frames = x.len().div_ceil(r.hop);
    let spec = (0..frames)
        .map(|f| {
            let start = (f * r.hop) as isize - pad;
            let mut buf: Vec<Complex64> = (0..n).map(|k| Complex64::new(if window[k] == 0.0 { 0.0 } else { x[reflect_index(start + k as isize, x.len())] * window[k] }, 0.0)).collect();
            fft.process(&mut buf);
            buf.truncate(n / 2 + 1);
            buf
        })
        .collect();
    Frames { n, hop: r.hop, window, spec }
}

/// Spectral convergence plus mean log-magnitude L1 at each resolution,
/// averaged over resolutions, with its gradient with respect to `x`.
/// STFTs use centred frames with reflection padding.
pub fn mr_stft_loss_grad(x: &[f64], y: &[f64], resolutions: &[StftResolution]) -> Result<(f64, Vec<f64>)> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("signal lengths differ: {} vs {}", x.len(), y.len())));
    }
    validate_resolutions(resolutions)?;
    let mut grad = vec![0.0; x.len()];
    if x.is_empty() {
        return Ok((0.0, grad));
    }
    let mut planner = FftPlanner::new();
    let mut total = 0.0;
    let scale = 1.0 / resolutions.len() as f64;
    for r in resolutions {
        let fx = analyse(x, r, &mut planner);
        let fy = analyse(y, r, &mut planner);
        let bins = fx.n / 2 + 1;
        let count = (fx.spec.len() * bins) as f64;
        let (mut diff2, mut ref2, mut log_l1) = (0.0, 0.0, 0.0);
        for (sx, sy) in fx.spec.iter().zip(&fy.spec) {
            for (a, b) in sx.iter().zip(sy) {
                let (ma, mb) = (a.norm(), b.norm());
                diff2 += (mb - ma) * (mb - ma);
                ref2 += mb * mb;
                log_l1 += (mb.max(LOG_MAG_FLOOR).ln() - ma.max(LOG_MAG_FLOOR).ln()).abs();
            }
        }
        let num = diff2.sqrt();
        let den = ref2.sqrt().max(1e-12);
        let sc = num / den;
        total += scale * (sc + log_l1 / count);

        // dL/d|X| per bin, then through |X| = |Σ w x e^{-iωkm}|.
        let fft = planner.plan_fft_forward(fx.n);
        let pad = (fx.n / 2) as isize;
        for (f, (sx, sy)) in fx.spec.iter().zip(&fy.spec).enumerate() {
            let mut buf = vec![Complex64::new(0.0, 0.0); fx.n];
            let mut any = false;
            for (k, (a, b)) in sx.iter().zip(sy).enumerate() {
                let (ma, mb) = (a.norm(), b.norm());
                if ma == 0.0 {
                    continue;
                }
                let mut g = if num > 0.0 { (ma - mb) / (num * den) } else { 0.0 };
                if ma > LOG_MAG_FLOOR {
                    let d = mb.max(LOG_MAG_FLOOR).ln() - ma.ln();
                    g += -d.signum() * (d != 0.0) as u8 as f64 / (ma * count);
                }
                if g == 0.0 {
                    continue;
                }
                buf[k] = a.conj() * (scale * g / ma);
                any = true;
            }
            if !any {
                continue;
            }
            fft.process(&mut buf);
            let start = (f * fx.hop) as isize - pad;
            for (m, z) in buf.iter().enumerate() {
                let w = fx.window[m];
                if w != 0.0 {
                    grad[reflect_index(start + m as isize, x.len())] += w * z.re;
                }
            }
        }
    }
    Ok((total, grad))
}

pub fn mr_stft_loss(x: &Waveform, y: &Waveform, resolutions: &[StftResolution]) -> Result<f64> {
    if x.sample_rate != y.sample_rate {
        return Err(Error::SampleRate { expected: y.sample_rate, actual: x.sample_rate });
    }
    let xs: Vec<f64> = x.samples.iter().map(|&v| v as f64).collect();
    let ys: Vec<f64> = y.samples.iter().map(|&v| v as f64).collect();
    Ok(mr_stft_loss_grad(&xs, &ys, resolutions)?.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialLosses {
    pub g_loss: f64,
    pub d_loss: f64,
}

/// Least-squares GAN objectives over discriminator scores.
pub fn adversarial_losses(d_real: &[f64], d_fake: &[f64]) -> Result<AdversarialLosses> {
    if d_real.iter().chain(d_fake).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite discriminator score".into()));
    }
    let mean = |xs: &[f64], c: f64| if xs.is_empty() { 0.0 } else { xs.iter().map(|v| (v - c) * (v - c)).sum::<f64>() / xs.len() as f64 };
    Ok(AdversarialLosses { g_loss: mean(d_fake, 1.0), d_loss: mean(d_real, 1.0) + mean(d_fake, 0.0) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lsgan_examples() {
        let l = adversarial_losses(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!((l.d_loss, l.g_loss), (0.0, 1.0));
        assert_eq!(adversarial_losses(&[0.3], &[1.0]).unwrap().g_loss, 0.0);
    }

    #[test]
    fn identical_signals_are_zero() {
        let x: Vec<f64> = (0..700).map(|n| (n as f64 * 0.05).sin() * 0.3).collect();
        let (l, g) = mr_stft_loss_grad(&x, &x, &default_resolutions()).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }
}
