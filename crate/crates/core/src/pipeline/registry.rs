use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::asr::{AsrModel, NgramLm};
use crate::dsp::digest_hex;
use crate::error::{Error, Result};
use crate::nn::Checkpoint;
use crate::spkemb::{SpeakerEmbedding, SpkembModel};
use crate::tts::TtsModel;
use crate::vocoder::Vocoder;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    Asr,
    Lm,
    Spkemb,
    Tts(String),
    Vocoder(String),
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Asr => f.write_str("asr"),
            Role::Lm => f.write_str("lm"),
            Role::Spkemb => f.write_str("spkemb"),
            Role::Tts(s) => write!(f, "tts:{s}"),
            Role::Vocoder(g) => write!(f, "vocoder:{g}"),
        }
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let named = |name: &str, make: fn(String) -> Role| {
            if name.is_empty() {
                Err(Error::Config(format!("role {s:?} needs a name after ':'")))
            } else {
                Ok(make(name.to_string()))
            }
        };
        match s.split_once(':') {
            None => match s {
                "asr" => Ok(Role::Asr),
                "lm" => Ok(Role::Lm),
                "spkemb" => Ok(Role::Spkemb),
                _ => Err(Error::Config(format!("unknown role {s:?}"))),
            },
            Some(("tts", name)) => named(name, Role::Tts),
            Some(("vocoder", name)) => named(name, Role::Vocoder),
            Some(_) => Err(Error::Config(format!("unknown role {s:?}"))),
        }
    }
}

/// A registered artifact. `digest` is the checkpoint's config digest, or the
/// content digest for the language model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryEntry {
    pub path: PathBuf,
    pub digest: String,
    /// Speaker embedding JSON for `tts:<speaker>` entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<PathBuf>,
    /// Vocoder group for `tts:<speaker>` entries; defaults to the only one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocoder: Option<String>,
}

/// Role → artifact map, stored as one JSON file. Relative paths resolve
/// against the file's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelRegistry {
    pub entries: BTreeMap<String, RegistryEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ModelRegistry {
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        Self { entries: BTreeMap::new(), base_dir: base_dir.into() }
    }

    pub fn insert(&mut self, role: &Role, entry: RegistryEntry) {
        self.entries.insert(role.to_string(), entry);
    }

    pub fn get(&self, role: &Role) -> Option<&RegistryEntry> {
        self.entries.get(&role.to_string())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut reg: ModelRegistry = serde_json::from_str(&text)?;
        reg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(reg)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Entry for a checkpoint file, taking the digest from the file itself.
    pub fn checkpoint_entry(&self, path: impl Into<PathBuf>) -> Result<RegistryEntry> {
        let path = path.into();
        let ckpt = Checkpoint::load(self.resolve(&path))?;
        Ok(RegistryEntry { path, digest: ckpt.bundle.config_digest, embedding: None, vocoder: None })
    }

    pub fn lm_entry(&self, path: impl Into<PathBuf>) -> Result<RegistryEntry> {
        let path = path.into();
        Ok(RegistryEntry { digest: file_digest(&self.resolve(&path))?, path, embedding: None, vocoder: None })
    }
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(digest_hex(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntryCheck {
    pub role: String,
    pub ok: bool,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RegistryReport {
    pub entries: Vec<EntryCheck>,
    pub warnings: Vec<String>,
}

impl RegistryReport {
    pub fn is_valid(&self) -> bool {
        self.entries.iter().all(|e| e.ok)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} entries\n", self.entries.len());
        for e in &self.entries {
            s += &format!("{:<20} {}  {}\n", e.role, if e.ok { "ok    " } else { "FAILED" }, e.message);
        }
        for w in &self.warnings {
            s += &format!("warning: {w}\n");
        }
        s
    }
}

fn load_checkpoint(reg: &ModelRegistry, e: &RegistryEntry) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(reg.resolve(&e.path))?;
    if ckpt.bundle.config_digest != e.digest {
        return Err(Error::DigestMismatch { expected: e.digest.clone(), actual: ckpt.bundle.config_digest.clone() });
    }
    Ok(ckpt)
}

/// Loads one entry, returning its feature-config digest where it has one.
fn check_entry(reg: &ModelRegistry, role: &Role, e: &RegistryEntry) -> Result<Option<String>> {
    match role {
        Role::Asr => Ok(Some(AsrModel::from_checkpoint(&load_checkpoint(reg, e)?)?.cfg.features.digest())),
        Role::Spkemb => Ok(Some(SpkembModel::from_checkpoint(&load_checkpoint(reg, e)?)?.cfg.features.digest())),
        Role::Vocoder(_) => Ok(Some(Vocoder::from_checkpoint(&load_checkpoint(reg, e)?)?.cfg.features.digest())),
        Role::Lm => {
            let path = reg.resolve(&e.path);
            NgramLm::load(&path)?;
            let d = file_digest(&path)?;
            if d != e.digest {
                return Err(Error::DigestMismatch { expected: e.digest.clone(), actual: d });
            }
            Ok(None)
        }
        Role::Tts(_) => {
            let m = TtsModel::from_checkpoint(&load_checkpoint(reg, e)?)?;
            let emb = e.embedding.as_ref().ok_or_else(|| Error::Invalid("tts entry has no embedding".into()))?;
            let emb = SpeakerEmbedding::load(reg.resolve(emb))?;
            if emb.vector.len() != m.cfg.spk_dim {
                return Err(Error::Shape(format!("embedding has {} dims, model expects {}", emb.vector.len(), m.cfg.spk_dim)));
            }
            Ok(Some(m.cfg.features.digest()))
        }
    }
}

/// Loads every entry and checks its digest. Failures are reported per
/// entry; feature-config disagreement between a voice and its vocoder is a
/// warning.
pub fn validate_registry(reg: &ModelRegistry) -> RegistryReport {
    let mut report = RegistryReport::default();
    let mut features: BTreeMap<Role, String> = BTreeMap::new();
    for (name, e) in &reg.entries {
        let outcome = name.parse::<Role>().and_then(|role| check_entry(reg, &role, e).map(|d| (role, d)));
        match outcome {
            Ok((role, d)) => {
                if let Some(d) = d {
                    features.insert(role, d);
                }
                report.entries.push(EntryCheck { role: name.clone(), ok: true, message: e.path.display().to_string() });
            }
            Err(err) => report.entries.push(EntryCheck { role: name.clone(), ok: false, message: err.to_string() }),
        }
    }
    let vocoders: Vec<(&String, &String)> = features.iter().filter_map(|(r, d)| if let Role::Vocoder(g) = r { Some((g, d)) } else { None }).collect();
    for (role, d) in &features {
        let Role::Tts(spk) = role else { continue };
        let group = reg.get(role).and_then(|e| e.vocoder.as_ref());
        for (g, vd) in &vocoders {
            if group.is_some_and(|want| want != *g) {
                continue;
            }
            if d != *vd {
                report.warnings.push(format!("tts:{spk} features {d} differ from vocoder:{g} features {vd}"));
            }
        }
        if let Some(want) = group {
            if !vocoders.iter().any(|(g, _)| *g == want) {
                report.warnings.push(format!("tts:{spk} refers to vocoder group {want:?}, which is not registered"));
            }
        }
    }
    report
}
