//! Feature dump files.
//!
//! Little-endian layout:
//!
//! ```text
//! magic   8 bytes  "CVCFEAT\0"
//! version u32      1
//! rows    u32      frames
//! cols    u32      feature dimension
//! digest  16 bytes ASCII hex feature-config digest
//! data    rows × cols f32, row-major
//! ```

use std::path::Path;

use super::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nn::Mat;

pub const FEATURE_MAGIC: &[u8; 8] = b"CVCFEAT\0";
const VERSION: u32 = 1;

pub fn write_features(path: impl AsRef<Path>, mel: &MelSpectrogram) -> Result<()> {
    let path = path.as_ref();
    if mel.config_digest.len() != 16 {
        return Err(Error::Invalid(format!("digest {:?} is not 16 characters", mel.config_digest)));
    }
    let mut out = Vec::with_capacity(36 + mel.values.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(mel.values.rows as u32).to_le_bytes());
    out.extend_from_slice(&(mel.values.cols as u32).to_le_bytes());
    out.extend_from_slice(mel.config_digest.as_bytes());
    for &v in &mel.values.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<MelSpectrogram> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Invalid(format!("{}: {m}", path.display()));
    if bytes.len() < 36 || &bytes[..8] != FEATURE_MAGIC {
        return Err(bad("not a feature file"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if u32_at(8) != VERSION {
        return Err(bad("unsupported feature file version"));
    }
    let (rows, cols) = (u32_at(12) as usize, u32_at(16) as usize);
    let digest = std::str::from_utf8(&bytes[20..36]).map_err(|_| bad("digest is not ASCII"))?.to_string();
    if bytes.len() != 36 + rows * cols * 4 {
        return Err(bad("payload length does not match header"));
    }
    let data = bytes[36..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(MelSpectrogram { values: Mat::from_vec(rows, cols, data), config_digest: digest })
}
