//! Deterministic synthetic bilingual multi-speaker "speech".

mod classify;
mod corpus;
mod render;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

pub use classify::{segment_equal, PrototypeClassifier};
pub use corpus::{generate_corpus, read_profiles, CorpusSpec, SpeakerSpec, Speakers, TokenCount, MANIFEST_FILE, SPEAKERS_FILE};
pub use render::{render_utterance, render_utterance_at, utterance_rng, DEFAULT_BASE_DURATION_MS};

use crate::error::{Error, Result};
use crate::tokens::{TokenSequence, SHARED};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Language {
    A,
    B,
}

impl std::str::FromStr for Language {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Language::A),
            "B" | "b" => Ok(Language::B),
            _ => Err(Error::Config(format!("unknown language {s:?} (expected A or B)"))),
        }
    }
}

impl std::fmt::Display for Language {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Language::A => "A",
            Language::B => "B",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub speaker_id: String,
    pub f0_hz: f64,
    pub formant_scale: f64,
    pub rate_scale: f64,
    pub language: Language,
    pub seed: u64,
}

pub const F0_RANGE: (f64, f64) = (80.0, 300.0);
pub const SCALE_RANGE: (f64, f64) = (0.7, 1.3);

impl SpeakerProfile {
    pub fn validate(&self) -> Result<()> {
        let within = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        if !within(self.f0_hz, F0_RANGE) || !within(self.formant_scale, SCALE_RANGE) || !within(self.rate_scale, SCALE_RANGE) {
            return Err(Error::Config(format!(
                "speaker {}: f0 {} / formant_scale {} / rate_scale {} out of range",
                self.speaker_id, self.f0_hz, self.formant_scale, self.rate_scale
            )));
        }
        Ok(())
    }
}

/// Draws every trait uniformly within its range from `seed`.
pub fn make_speaker_profile(seed: u64, language: Language) -> SpeakerProfile {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_0000_0000);
    SpeakerProfile {
        speaker_id: format!("{language}{seed}"),
        f0_hz: rng.random_range(F0_RANGE.0..=F0_RANGE.1),
        formant_scale: rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1),
        rate_scale: rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1),
        language,
        seed,
    }
}

/// Spectral prototype of one token.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub formants: [f64; 3],
    pub voiced: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenInventory {
    pub language: Language,
    pub symbols: Vec<String>,
    pub prototypes: Vec<Prototype>,
}

const VOWELS: [(&str, [f64; 3]); 5] = [
    ("a", [730.0, 1090.0, 2440.0]),
    ("e", [530.0, 1840.0, 2480.0]),
    ("i", [270.0, 2290.0, 3010.0]),
    ("o", [570.0, 840.0, 2410.0]),
    ("u", [300.0, 870.0, 2240.0]),
];
const CONSONANTS_A: [(&str, [f64; 3], bool); 3] =
    [("k", [1500.0, 2100.0, 2900.0], false), ("s", [4000.0, 5000.0, 6000.0], false), ("t", [2500.0, 3300.0, 4200.0], false)];
const CONSONANTS_B: [(&str, [f64; 3], bool); 3] =
    [("m", [250.0, 1300.0, 2100.0], true), ("n", [250.0, 1600.0, 2700.0], true), ("p", [1100.0, 1800.0, 2800.0], false)];

pub fn inventory(language: Language) -> TokenInventory {
    let consonants = match language {
        Language::A => &CONSONANTS_A,
        Language::B => &CONSONANTS_B,
    };
    let mut symbols = Vec::new();
    let mut prototypes = Vec::new();
    for (s, f) in VOWELS {
        symbols.push(s.to_string());
        prototypes.push(Prototype { formants: f, voiced: true });
    }
    for &(s, f, voiced) in consonants {
        symbols.push(s.to_string());
        prototypes.push(Prototype { formants: f, voiced });
    }
    TokenInventory { language, symbols, prototypes }
}

impl TokenInventory {
    pub fn prototype(&self, symbol: &str) -> Option<Prototype> {
        self.symbols.iter().position(|s| s == symbol).map(|i| self.prototypes[i])
    }

    pub fn contains(&self, symbol: &str) -> bool {
        self.symbols.iter().any(|s| s == symbol)
    }
}

/// Prototype for a symbol in `language`; shared vowels resolve from either.
pub fn lookup_prototype(symbol: &str, language: Language) -> Result<Prototype> {
    let own = inventory(language);
    if let Some(p) = own.prototype(symbol) {
        return Ok(p);
    }
    if SHARED.contains(&symbol) {
        return Ok(inventory(Language::A).prototype(symbol).expect("vowel in A"));
    }
    Err(Error::UnknownToken(symbol.to_string()))
}

/// Uniform random token sequence over a language inventory.
pub fn random_tokens(rng: &mut impl Rng, language: Language, len: usize) -> TokenSequence {
    let inv = inventory(language);
    TokenSequence::new((0..len).map(|_| inv.symbols[rng.random_range(0..inv.symbols.len())].clone()))
}
