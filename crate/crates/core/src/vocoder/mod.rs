//! Non-autoregressive, noise-driven waveform generator conditioned on
//! upsampled log-mel frames, trained with a multi-resolution STFT loss and
//! a least-squares adversarial loss.

mod loss;
mod train;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use loss::{adversarial_losses, default_resolutions, mr_stft_loss, mr_stft_loss_grad, validate_resolutions, AdversarialLosses, StftResolution, LOG_MAG_FLOOR};
pub use train::{train_vocoder, VocoderTrainConfig, VocoderTrainLog};

use crate::dsp::{digest_hex, griffin_lim, resample, FeatureConfig, MelSpectrogram};
use crate::error::{Error, Result};
use crate::nn::{seeded_rng, Checkpoint, Conv1d, Ctx, Mat, ModuleKind, ParamId, ParamStore, Var};
use crate::train::Cmvn;
use crate::Waveform;

/// Rate at which conditioning mels are always computed.
pub const MEL_RATE: u32 = 16000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub channels: usize,
    pub cond_channels: usize,
    pub layers: usize,
    pub kernel: usize,
    /// Dilation of layer `l` is `2^(l mod dilation_cycle)`.
    pub dilation_cycle: usize,
    /// Griffin-Lim iterations for the excitation fed next to the noise and
    /// mixed into the output through a gain that starts at zero; 0 = noise only.
    #[serde(default)]
    pub prior_iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub channels: usize,
    pub layers: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocoderModelConfig {
    pub features: FeatureConfig,
    pub output_rate: u32,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl Default for VocoderModelConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            output_rate: 16000,
            generator: GeneratorConfig { channels: 24, cond_channels: 24, layers: 8, kernel: 3, dilation_cycle: 8, prior_iterations: 16 },
            discriminator: DiscriminatorConfig { channels: 24, layers: 4 },
        }
    }
}

impl VocoderModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        if self.features.sample_rate != MEL_RATE {
            return Err(Error::Config(format!("conditioning mels must be computed at {MEL_RATE} Hz")));
        }
        if self.output_rate != 16000 && self.output_rate != 24000 {
            return Err(Error::Config(format!("output_rate must be 16000 or 24000, got {}", self.output_rate)));
        }
        let g = &self.generator;
        if g.channels == 0 || g.cond_channels == 0 || g.layers == 0 || g.kernel == 0 || g.dilation_cycle == 0 {
            return Err(Error::Config("generator sizes must be positive".into()));
        }
        if self.discriminator.channels == 0 || self.discriminator.layers < 2 {
            return Err(Error::Config("discriminator needs channels > 0 and >= 2 layers".into()));
        }
        if (self.features.hop as u64 * self.output_rate as u64) % MEL_RATE as u64 != 0 {
            return Err(Error::Config("hop × output_rate must be a multiple of 16000".into()));
        }
        Ok(())
    }

    /// Output samples per mel frame.
    pub fn upsample_factor(&self) -> usize {
        self.features.hop * self.output_rate as usize / MEL_RATE as usize
    }

    pub fn digest(&self) -> String {
        let arch = serde_json::json!({ "rate": self.output_rate, "g": self.generator, "d": self.discriminator });
        digest_hex(format!("vocoder-v1;{};{}", arch, self.features.digest()).as_bytes())
    }
}

struct GenLayer {
    conv: Conv1d,
    cond: Conv1d,
    res: Conv1d,
    skip: Conv1d,
}

pub struct Generator {
    cfg: VocoderModelConfig,
    cond_in: Conv1d,
    input: Conv1d,
    prior_gain: Option<ParamId>,
    layers: Vec<GenLayer>,
    out1: Conv1d,
    out2: Conv1d,
}

impl Generator {
    fn new(store: &mut ParamStore<f32>, cfg: VocoderModelConfig, rng: &mut crate::nn::Rng) -> Self {
        let g = cfg.generator;
        let c = g.channels;
        let cond_in = Conv1d::new(store, "voc.g.cond_in", cfg.features.n_mels, g.cond_channels, 3, 1, rng);
        let with_prior = g.prior_iterations > 0;
        let input = Conv1d::new(store, "voc.g.in", 1 + usize::from(with_prior), c, 1, 1, rng);
        let prior_gain = with_prior.then(|| store.add("voc.g.prior_gain", Mat::zeros(1, 1)));
        let layers = (0..g.layers)
            .map(|l| GenLayer {
                conv: Conv1d::new(store, &format!("voc.g.{l}.conv"), c, 2 * c, g.kernel, 1 << (l % g.dilation_cycle), rng),
                cond: Conv1d::new(store, &format!("voc.g.{l}.cond"), g.cond_channels, 2 * c, 1, 1, rng),
                res: Conv1d::new(store, &format!("voc.g.{l}.res"), c, c, 1, 1, rng),
                skip: Conv1d::new(store, &format!("voc.g.{l}.skip"), c, c, 1, 1, rng),
            })
            .collect();
        let out1 = Conv1d::new(store, "voc.g.out1", c, c, 1, 1, rng);
        let out2 = Conv1d::new(store, "voc.g.out2", c, 1, 1, 1, rng);
        Self { cfg, cond_in, input, prior_gain, layers, out1, out2 }
    }

    /// `mel` is normalised `frames × n_mels`; `noise` and `prior` are
    /// `1 × frames·factor`. Returns a `1 × frames·factor` waveform.
    pub fn forward(&self, ctx: &mut Ctx<f32>, mel: &Mat<f32>, noise: &Mat<f32>, prior: Option<&Mat<f32>>) -> Var {
        let c = self.cfg.generator.channels;
        let m = ctx.g.constant(mel.transpose());
        let cond = self.cond_in.forward(ctx, m);
        let cond = ctx.g.repeat_cols(cond, self.cfg.upsample_factor());
        let z = ctx.g.constant(noise.clone());
        let p = match (self.prior_gain, prior) {
            (Some(_), Some(p)) => Some(ctx.g.constant(p.clone())),
            (Some(_), None) => Some(ctx.g.constant(Mat::zeros(1, noise.cols))),
            _ => None,
        };
        let z = match p {
            Some(p) => ctx.g.concat_rows(&[z, p]),
            None => z,
        };
        let mut x = self.input.forward(ctx, z);
        let mut skip: Option<Var> = None;
        for l in &self.layers {
            let h = l.conv.forward(ctx, x);
            let hc = l.cond.forward(ctx, cond);
            let a = ctx.g.add(h, hc);
            let t = ctx.g.slice_rows(a, 0, c);
            let s = ctx.g.slice_rows(a, c, c);
            let t = ctx.g.tanh(t);
            let s = ctx.g.sigmoid(s);
            let gated = ctx.g.mul(t, s);
            let r = l.res.forward(ctx, gated);
            let xr = ctx.g.add(x, r);
            x = ctx.g.scale(xr, std::f64::consts::FRAC_1_SQRT_2);
            let sk = l.skip.forward(ctx, gated);
            skip = Some(match skip {
                None => sk,
                Some(acc) => ctx.g.add(acc, sk),
            });
        }
        let s = skip.expect("at least one layer");
        let s = ctx.g.scale(s, (1.0 / self.layers.len() as f64).sqrt());
        let h = ctx.g.relu(s);
        let h = self.out1.forward(ctx, h);
        let h = ctx.g.relu(h);
        let y = self.out2.forward(ctx, h);
        match (self.prior_gain, p) {
            (Some(gain), Some(p)) => {
                let gain = ctx.p(gain);
                let gain = ctx.g.repeat_cols(gain, noise.cols);
                let mixed = ctx.g.mul(p, gain);
                ctx.g.add(y, mixed)
            }
            _ => y,
        }
    }
}

pub struct Discriminator {
    convs: Vec<Conv1d>,
}

impl Discriminator {
    fn new(store: &mut ParamStore<f32>, cfg: DiscriminatorConfig, rng: &mut crate::nn::Rng) -> Self {
        let n = cfg.layers;
        let convs = (0..n)
            .map(|l| {
                let c_in = if l == 0 { 1 } else { cfg.channels };
                let c_out = if l + 1 == n { 1 } else { cfg.channels };
                let dil = if l == 0 || l + 1 == n { 1 } else { 1 << l };
                Conv1d::new(store, &format!("voc.d.{l}"), c_in, c_out, 3, dil, rng)
            })
            .collect();
        Self { convs }
    }

    /// Per-sample realness scores (`1 × len`) for a `1 × len` waveform.
    pub fn forward(&self, ctx: &mut Ctx<f32>, x: Var) -> Var {
        let mut h = x;
        let last = self.convs.len() - 1;
        for (i, c) in self.convs.iter().enumerate() {
            h = c.forward(ctx, h);
            if i < last {
                h = ctx.g.leaky_relu(h, 0.2);
            }
        }
        h
    }
}

pub struct Vocoder {
    pub cfg: VocoderModelConfig,
    pub store: ParamStore<f32>,
    pub cmvn: Cmvn,
    pub generator: Generator,
}

impl Vocoder {
    pub fn new(cfg: VocoderModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        let generator = Generator::new(&mut store, cfg, &mut rng);
        Ok(Self { cmvn: Cmvn::identity(cfg.features.n_mels), cfg, store, generator })
    }

    pub fn digest(&self) -> String {
        self.cfg.digest()
    }

    pub fn upsample_factor(&self) -> usize {
        self.cfg.upsample_factor()
    }

    /// Griffin-Lim excitation for raw (unnormalised) log-mel frames at the
    /// output rate, `frames × factor` samples; `None` without a prior.
    pub fn prior(&self, mel: &Mat<f32>) -> Result<Option<Mat<f32>>> {
        let iterations = self.cfg.generator.prior_iterations;
        if iterations == 0 {
            return Ok(None);
        }
        let len = mel.rows * self.upsample_factor();
        if len == 0 {
            return Ok(Some(Mat::zeros(1, 0)));
        }
        let spec = MelSpectrogram { values: mel.clone(), config_digest: self.cfg.features.digest() };
        let mut w = griffin_lim(&spec, &self.cfg.features, iterations, 1e-10)?;
        if w.sample_rate != self.cfg.output_rate {
            w = resample(&w, self.cfg.output_rate)?;
        }
        let mut samples = w.samples;
        samples.resize(len, 0.0);
        Ok(Some(Mat::from_vec(1, len, samples)))
    }

    /// Generator output for normalised frames, explicit noise and the
    /// excitation from [`Vocoder::prior`].
    pub fn generate(&self, mel_norm: &Mat<f32>, noise: &Mat<f32>, prior: Option<&Mat<f32>>) -> Vec<f32> {
        if mel_norm.rows == 0 {
            return Vec::new();
        }
        let mut ctx = Ctx::eval(&self.store);
        let y = self.generator.forward(&mut ctx, mel_norm, noise, prior);
        ctx.g.value(y).data.clone()
    }

    pub fn to_checkpoint(&self, train_config_json: String, seed: u64) -> Checkpoint {
        let mut bundle = self.store.to_bundle(&self.digest());
        bundle.tensors.extend(self.cmvn.tensors("cmvn"));
        Checkpoint { module_kind: ModuleKind::Vocoder, bundle, train_config: train_config_json, rng_seed: seed }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(&ckpt.train_config)?;
        let cfg: VocoderModelConfig = serde_json::from_value(value.get("model").cloned().ok_or_else(|| Error::Checkpoint("train config lacks a model section".into()))?)?;
        let mut m = Self::new(cfg, 0)?;
        ckpt.expect(ModuleKind::Vocoder, &m.digest())?;
        m.store.load_bundle(&ckpt.bundle, &["cmvn.mean", "cmvn.std"])?;
        m.cmvn = Cmvn::from_checkpoint(ckpt, "cmvn")?;
        Ok(m)
    }
}

pub(crate) fn gaussian_noise(len: usize, rng: &mut crate::nn::Rng) -> Mat<f32> {
    Mat::from_vec(1, len, (0..len).map(|_| StandardNormal.sample(rng)).collect())
}

/// Mel to waveform at the vocoder's output rate with noise drawn from
/// `noise_seed`. Output has exactly `frames × factor` samples in `[-1, 1]`.
pub fn vocode_with_seed(mel: &MelSpectrogram, vocoder: &Vocoder, noise_seed: u64) -> Result<Waveform> {
    mel.check_digest(&vocoder.cfg.features)?;
    let len = mel.frames() * vocoder.upsample_factor();
    if len == 0 {
        return Ok(Waveform::empty(vocoder.cfg.output_rate));
    }
    let noise = gaussian_noise(len, &mut seeded_rng(noise_seed));
    let prior = vocoder.prior(&mel.values)?;
    let y = vocoder.generate(&vocoder.cmvn.apply(&mel.values), &noise, prior.as_ref());
    Ok(Waveform::new(y.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect(), vocoder.cfg.output_rate))
}

pub fn vocode(mel: &MelSpectrogram, vocoder: &Vocoder) -> Result<Waveform> {
    vocode_with_seed(mel, vocoder, 0)
}
