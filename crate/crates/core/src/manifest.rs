//! JSON Lines corpus manifests.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, Waveform};
use crate::error::{Error, Result};
use crate::synthcorpus::Language;
use crate::tokens::TokenSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub utt_id: String,
    pub speaker_id: String,
    pub language: Language,
    pub token_string: String,
    /// Relative paths resolve against the manifest's directory.
    pub audio_path: String,
    pub sample_rate: u32,
    pub duration_sec: f64,
}

impl ManifestRecord {
    pub fn tokens(&self) -> TokenSequence {
        TokenSequence::parse(&self.token_string)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusManifest {
    pub records: Vec<ManifestRecord>,
    pub base_dir: PathBuf,
}

impl CorpusManifest {
    pub fn new(records: Vec<ManifestRecord>, base_dir: impl Into<PathBuf>) -> Self {
        Self { records, base_dir: base_dir.into() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for r in &self.records {
            if !seen.insert(&r.utt_id) {
                return Err(Error::Invalid(format!("duplicate utt_id {}", r.utt_id)));
            }
            if r.token_string.trim().is_empty() {
                return Err(Error::Invalid(format!("{}: empty token_string", r.utt_id)));
            }
        }
        Ok(())
    }

    pub fn audio_path(&self, r: &ManifestRecord) -> PathBuf {
        let p = Path::new(&r.audio_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_audio(&self, r: &ManifestRecord) -> Result<Waveform> {
        read_wav(self.audio_path(r))
    }

    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self.records.iter().map(|r| r.speaker_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn languages(&self) -> Vec<Language> {
        let mut l: Vec<Language> = self.records.iter().map(|r| r.language).collect();
        l.sort();
        l.dedup();
        l
    }

    pub fn filter(&self, keep: impl Fn(&ManifestRecord) -> bool) -> CorpusManifest {
        CorpusManifest { records: self.records.iter().filter(|r| keep(r)).cloned().collect(), base_dir: self.base_dir.clone() }
    }

    pub fn for_speakers(&self, speakers: &[String]) -> CorpusManifest {
        self.filter(|r| speakers.contains(&r.speaker_id))
    }

    /// Per speaker, in manifest order: the first `n_train` records go to
    /// the first part, the rest to the second.
    pub fn split_per_speaker(&self, n_train: usize) -> (CorpusManifest, CorpusManifest) {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for r in &self.records {
            let c = counts.entry(&r.speaker_id).or_insert(0);
            if *c < n_train {
                train.push(r.clone());
            } else {
                test.push(r.clone());
            }
            *c += 1;
        }
        (CorpusManifest::new(train, &self.base_dir), CorpusManifest::new(test, &self.base_dir))
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: ManifestRecord = serde_json::from_str(line).map_err(|e| Error::Invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
            records.push(r);
        }
        let m = CorpusManifest::new(records, path.parent().unwrap_or(Path::new(".")));
        m.validate()?;
        Ok(m)
    }
}
