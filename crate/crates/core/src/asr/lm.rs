//! Add-one-smoothed n-gram language model used for shallow fusion.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::CorpusManifest;
use crate::tokens::SYMBOLS;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NgramLm {
    pub order: usize,
    /// Predictable symbols, including [`EOS`] when sentence ends are modelled.
    pub vocab: Vec<String>,
    /// Context (space-joined, `order - 1` symbols) → next symbol → count.
    pub counts: BTreeMap<String, BTreeMap<String, u64>>,
}

impl NgramLm {
    pub fn train<S: AsRef<str>>(sentences: &[Vec<S>], order: usize, vocab: &[&str], with_eos: bool) -> Result<Self> {
        if !(1..=3).contains(&order) {
            return Err(Error::Config(format!("n-gram order must be 1, 2 or 3 (got {order})")));
        }
        let mut v: Vec<String> = vocab.iter().map(|s| s.to_string()).collect();
        if with_eos {
            v.push(EOS.to_string());
        }
        let mut counts: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        for s in sentences {
            let mut hist: Vec<&str> = vec![BOS; order - 1];
            let mut words: Vec<&str> = s.iter().map(|w| w.as_ref()).collect();
            if with_eos {
                words.push(EOS);
            }
            for w in words {
                if !v.iter().any(|x| x == w) {
                    return Err(Error::UnknownToken(w.to_string()));
                }
                let ctx = hist[hist.len() + 1 - order..].join(" ");
                *counts.entry(ctx).or_default().entry(w.to_string()).or_insert(0) += 1;
                hist.push(w);
            }
        }
        Ok(Self { order, vocab: v, counts })
    }

    pub fn has_eos(&self) -> bool {
        self.vocab.iter().any(|v| v == EOS)
    }

    /// `log P(next | prefix)`, using the last `order - 1` symbols of `prefix`.
    pub fn log_prob(&self, prefix: &[&str], next: &str) -> f64 {
        let mut hist: Vec<&str> = vec![BOS; self.order - 1];
        hist.extend_from_slice(prefix);
        let ctx = hist[hist.len() + 1 - self.order..].join(" ");
        let row = self.counts.get(&ctx);
        let total: u64 = row.map(|r| r.values().sum()).unwrap_or(0);
        let c = row.and_then(|r| r.get(next)).copied().unwrap_or(0);
        ((c + 1) as f64 / (total + self.vocab.len() as u64) as f64).ln()
    }

    /// Log-probability of a whole sentence (with its end marker if modelled).
    pub fn score(&self, sentence: &[&str]) -> f64 {
        let mut total = 0.0;
        for i in 0..sentence.len() {
            total += self.log_prob(&sentence[..i], sentence[i]);
        }
        if self.has_eos() {
            total += self.log_prob(sentence, EOS);
        }
        total
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let lm: Self = serde_json::from_str(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?;
        if !(1..=3).contains(&lm.order) {
            return Err(Error::Config(format!("{}: bad n-gram order {}", path.display(), lm.order)));
        }
        Ok(lm)
    }
}

/// Token-level LM over the manifest transcripts, with sentence ends.
pub fn train_ngram_lm(manifest: &CorpusManifest, order: usize) -> Result<NgramLm> {
    let sentences: Vec<Vec<String>> = manifest.records.iter().map(|r| r.tokens().symbols).collect();
    NgramLm::train(&sentences, order, &SYMBOLS, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unigram_add_one() {
        let lm = NgramLm::train(&[vec!["a", "a", "b"]], 1, &["a", "b"], false).unwrap();
        assert!((lm.log_prob(&[], "a").exp() - 0.6).abs() < 1e-12);
        assert!((lm.log_prob(&["b"], "b").exp() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn conditionals_normalise() {
        let data = vec![vec!["a", "k", "a"], vec!["k", "k"], vec!["e"]];
        for order in 1..=3 {
            let lm = NgramLm::train(&data, order, &["a", "k", "e"], true).unwrap();
            for ctx in [vec![], vec!["a"], vec!["k", "k"], vec!["e", "a"]] {
                let s: f64 = lm.vocab.iter().map(|v| lm.log_prob(&ctx, v).exp()).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bigram_counts_exactly() {
        let lm = NgramLm::train(&[vec!["a", "b"], vec!["a", "a"]], 2, &["a", "b"], true).unwrap();
        // Context "a" is followed by b, a, </s>: counts 1, 1, 1 over |V| = 3.
        assert!((lm.log_prob(&["a"], "b").exp() - 2.0 / 6.0).abs() < 1e-12);
        assert!((lm.log_prob(&[], "a").exp() - 3.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn bad_order_and_unknown_symbol() {
        assert!(NgramLm::train(&[vec!["a"]], 4, &["a"], false).is_err());
        assert!(matches!(NgramLm::train(&[vec!["z"]], 2, &["a"], false), Err(Error::UnknownToken(_))));
    }
}
