use crate::audio::Waveform;
use crate::error::{Error, Result};

const ZERO_CROSSINGS: usize = 48;
const ROLLOFF: f64 = 0.95;
const KAISER_BETA: f64 = 9.0;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Band-limited polyphase resampling with a Kaiser-windowed sinc kernel.
/// Output length is `round(len · target / source)`.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 || w.sample_rate == 0 {
        return Err(Error::Config("sample rates must be positive".into()));
    }
    if target_rate == w.sample_rate {
        return Ok(w.clone());
    }
    let g = gcd(w.sample_rate as u64, target_rate as u64);
    let up = (target_rate as u64 / g) as usize;
    let down = (w.sample_rate as u64 / g) as usize;
    let out_len = ((w.len() as f64) * up as f64 / down as f64).round() as usize;

    // Cutoff relative to the input Nyquist frequency.
    let cutoff = ROLLOFF * (up as f64 / down as f64).min(1.0);
    let half_width = ZERO_CROSSINGS as f64 / cutoff;
    let taps = half_width.ceil() as isize;
    let i0_beta = bessel_i0(KAISER_BETA);
    let kernel = |tau: f64| -> f64 {
        if tau.abs() >= half_width {
            return 0.0;
        }
        let arg = std::f64::consts::PI * cutoff * tau;
        let sinc = if arg.abs() < 1e-12 { 1.0 } else { arg.sin() / arg };
        let r = tau / half_width;
        cutoff * sinc * bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0_beta
    };

    // One filter per output phase: output n sits at input time n·down/up.
    let phases: Vec<Vec<f64>> = (0..up)
        .map(|p| {
            let frac = p as f64 / up as f64;
            (-taps + 1..=taps).map(|j| kernel(frac - j as f64)).collect()
        })
        .collect();

    let x = &w.samples;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let pos = n * down;
        let base = (pos / up) as isize;
        let filt = &phases[pos % up];
        let mut acc = 0.0f64;
        for (i, &h) in filt.iter().enumerate() {
            let k = base - taps + 1 + i as isize;
            if k >= 0 && (k as usize) < x.len() {
                acc += h * x[k as usize] as f64;
            }
        }
        out.push(acc as f32);
    }
    Ok(Waveform::new(out, target_rate))
}
