pub mod asr;
pub mod audio;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod nn;
pub mod pipeline;
pub mod spkemb;
pub mod synthcorpus;
pub mod tokens;
pub mod train;
pub mod tts;
pub mod vocoder;

pub use audio::Waveform;
pub use error::{Error, Result};
pub use manifest::{CorpusManifest, ManifestRecord};
pub use tokens::TokenSequence;
