//! Checkpoint container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic        8 bytes  "CVCCKPT\0"
//! format       u32      CHECKPOINT_FORMAT
//! module_kind  u8 len + ASCII ("asr" | "tts" | "spkemb" | "vocoder")
//! digest       u16 len + ASCII config digest
//! version      u32      parameter bundle version
//! rng_seed     u64
//! config       u32 len + UTF-8 JSON training-config snapshot
//! count        u32      number of tensors, sorted by name
//! per tensor:  u16 len + UTF-8 name, u8 rank, rank × u32 dims, f32 payload
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::params::{NamedTensor, ParameterBundle};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CVCCKPT\0";
pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModuleKind {
    Asr,
    Tts,
    Spkemb,
    Vocoder,
}

impl ModuleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModuleKind::Asr => "asr",
            ModuleKind::Tts => "tts",
            ModuleKind::Spkemb => "spkemb",
            ModuleKind::Vocoder => "vocoder",
        }
    }
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModuleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "asr" => Ok(ModuleKind::Asr),
            "tts" => Ok(ModuleKind::Tts),
            "spkemb" => Ok(ModuleKind::Spkemb),
            "vocoder" => Ok(ModuleKind::Vocoder),
            other => Err(Error::Checkpoint(format!("unknown module kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub module_kind: ModuleKind,
    pub bundle: ParameterBundle,
    /// Canonical JSON of the training configuration.
    pub train_config: String,
    pub rng_seed: u64,
}

impl Checkpoint {
    pub fn config<C: for<'de> Deserialize<'de>>(&self) -> Result<C> {
        Ok(serde_json::from_str(&self.train_config)?)
    }

    /// Fails unless this checkpoint was produced for `kind` with `digest`.
    pub fn expect(&self, kind: ModuleKind, digest: &str) -> Result<()> {
        if self.module_kind != kind {
            return Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {}", self.module_kind)));
        }
        if self.bundle.config_digest != digest {
            return Err(Error::DigestMismatch { expected: digest.to_string(), actual: self.bundle.config_digest.clone() });
        }
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Result<&NamedTensor> {
        self.bundle.tensors.get(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_FORMAT.to_le_bytes());
        let kind = self.module_kind.as_str().as_bytes();
        out.push(kind.len() as u8);
        out.extend_from_slice(kind);
        let digest = self.bundle.config_digest.as_bytes();
        out.extend_from_slice(&(digest.len() as u16).to_le_bytes());
        out.extend_from_slice(digest);
        out.extend_from_slice(&self.bundle.version.to_le_bytes());
        out.extend_from_slice(&self.rng_seed.to_le_bytes());
        out.extend_from_slice(&(self.train_config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.train_config.as_bytes());
        out.extend_from_slice(&(self.bundle.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.bundle.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let format = r.u32()?;
        if format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format version {format}")));
        }
        let n = r.u8()? as usize;
        let module_kind: ModuleKind = r.string(n)?.parse()?;
        let n = r.u16()? as usize;
        let config_digest = r.string(n)?;
        let version = r.u32()?;
        let rng_seed = r.u64()?;
        let n = r.u32()? as usize;
        let train_config = r.string(n)?;
        let count = r.u32()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let n = r.u16()? as usize;
            let name = r.string(n)?;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(len.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.insert(name, NamedTensor { shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { module_kind, bundle: ParameterBundle { version, config_digest, tensors }, train_config, rng_seed })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut tensors = BTreeMap::new();
        tensors.insert("b".to_string(), NamedTensor { shape: vec![1, 3], data: vec![0.5, -1.25, f32::MIN_POSITIVE] });
        tensors.insert("a.w".to_string(), NamedTensor { shape: vec![2, 2], data: vec![1.0, 2.0, 3.0, 4.0] });
        Checkpoint {
            module_kind: ModuleKind::Tts,
            bundle: ParameterBundle { version: 1, config_digest: "0123456789abcdef".into(), tensors },
            train_config: r#"{"lr":0.001}"#.into(),
            rng_seed: 42,
        }
    }

    #[test]
    fn bytes_round_trip() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncated_and_corrupted_files_are_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }

    #[test]
    fn expect_checks_kind_and_digest() {
        let ck = sample();
        assert!(ck.expect(ModuleKind::Tts, "0123456789abcdef").is_ok());
        assert!(ck.expect(ModuleKind::Asr, "0123456789abcdef").is_err());
        assert!(matches!(ck.expect(ModuleKind::Tts, "ffff"), Err(Error::DigestMismatch { .. })));
    }
}
