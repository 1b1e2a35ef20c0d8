use std::path::Path;

use crate::error::{Error, Result};

/// Mono waveform.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn empty(sample_rate: u32) -> Self {
        Self { samples: Vec::new(), sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_sec(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, &x| m.max(x.abs()))
    }

    /// 16-bit PCM quantization as applied by [`write_wav`].
    pub fn quantized(&self) -> Waveform {
        let samples = self.samples.iter().map(|&x| pcm16(x) as f32 / 32768.0).collect();
        Waveform { samples, sample_rate: self.sample_rate }
    }
}

fn pcm16(x: f32) -> i16 {
    (x.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

/// Writes RIFF WAV, 16-bit PCM, mono.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let spec = hound::WavSpec { channels: 1, sample_rate: w.sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &x in &w.samples {
        writer.write_sample(pcm16(x))?;
    }
    writer.finalize()?;
    Ok(())
}

/// Reads a mono WAV (16-bit PCM or 32-bit float). Multi-channel input is averaged.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader.samples::<i16>().map(|s| s.map(|v| v as f32 / 32768.0)).collect::<Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader.samples::<f32>().collect::<Result<_, _>>()?,
        (fmt, bits) => return Err(Error::Invalid(format!("{}: unsupported WAV format {fmt:?}/{bits}", path.display()))),
    };
    let ch = spec.channels.max(1) as usize;
    let samples = if ch == 1 { interleaved } else { interleaved.chunks(ch).map(|c| c.iter().sum::<f32>() / ch as f32).collect() };
    Ok(Waveform { samples, sample_rate: spec.sample_rate })
}
