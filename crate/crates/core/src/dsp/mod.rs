//! Signal-processing frontend: STFT/ISTFT, log-mel features, Griffin-Lim
//! inversion and resampling.

mod featio;
mod griffin_lim;
mod mel;
mod resample;
mod stft;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use featio::{read_features, write_features, FEATURE_MAGIC};
pub use griffin_lim::{griffin_lim, griffin_lim_traced, mel_to_linear_magnitude};
pub use mel::{hz_to_mel, logmel, mel_filterbank, mel_from_power, mel_to_hz};
pub use resample::resample;
pub use stft::{frame_count, istft, magnitude, reflect_index, stft, Spectrogram};

use crate::error::{Error, Result};
use crate::nn::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
}

/// All analysis hyperparameters for spectrogram and mel features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop: usize,
    pub win_length: usize,
    pub window: Window,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { sample_rate: 16000, fft_size: 512, hop: 160, win_length: 400, window: Window::Hann, n_mels: 80, fmin: 80.0, fmax: 7600.0, log_floor: 1e-10 }
    }
}

impl FeatureConfig {
    /// An STFT-only configuration (used by the multi-resolution loss).
    pub fn analysis(sample_rate: u32, fft_size: usize, hop: usize, win_length: usize) -> Self {
        Self { sample_rate, fft_size, hop, win_length, fmax: sample_rate as f64 / 2.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.win_length || self.win_length > self.fft_size {
            return Err(Error::Config(format!("need 0 < hop ({}) <= win_length ({}) <= fft_size ({})", self.hop, self.win_length, self.fft_size)));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0) {
            return Err(Error::Config(format!("need 0 <= fmin ({}) < fmax ({}) <= sample_rate/2", self.fmin, self.fmax)));
        }
        if self.n_mels == 0 {
            return Err(Error::Config("n_mels must be >= 1".into()));
        }
        if self.log_floor <= 0.0 {
            return Err(Error::Config("log_floor must be positive".into()));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Stable 16-hex-digit identifier of every field, including the mel
    /// scale formula, so features from different analyses never mix.
    pub fn digest(&self) -> String {
        let canon = format!(
            "cvc-feat-v1;sr={};fft={};hop={};win={};window={:?};mels={};fmin={:e};fmax={:e};floor={:e};mel=htk;log=ln;power=2",
            self.sample_rate, self.fft_size, self.hop, self.win_length, self.window, self.n_mels, self.fmin, self.fmax, self.log_floor
        );
        digest_hex(canon.as_bytes())
    }

    pub fn window(&self) -> Vec<f64> {
        // Periodic Hann of win_length, centred in an fft_size frame.
        let mut w = vec![0.0; self.fft_size];
        let off = (self.fft_size - self.win_length) / 2;
        for n in 0..self.win_length {
            w[off + n] = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / self.win_length as f64).cos();
        }
        w
    }
}

/// First 16 hex digits of SHA-256.
pub fn digest_hex(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// `frames × n_mels` natural-log mel energies.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub values: Mat<f32>,
    pub config_digest: String,
}

impl MelSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.rows
    }

    pub fn n_mels(&self) -> usize {
        self.values.cols
    }

    pub fn check_digest(&self, cfg: &FeatureConfig) -> Result<()> {
        let d = cfg.digest();
        if d != self.config_digest {
            return Err(Error::DigestMismatch { expected: d, actual: self.config_digest.clone() });
        }
        Ok(())
    }
}
