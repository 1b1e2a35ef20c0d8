//! Symbol sequences exchanged between recognition and synthesis.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Union of both synthetic languages' inventories, in id order.
pub const SYMBOLS: [&str; 11] = ["a", "e", "i", "o", "u", "k", "s", "t", "m", "n", "p"];

/// Vowels shared by both languages.
pub const SHARED: [&str; 5] = ["a", "e", "i", "o", "u"];

pub fn symbol_index(s: &str) -> Result<usize> {
    SYMBOLS.iter().position(|&x| x == s).ok_or_else(|| Error::UnknownToken(s.to_string()))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    pub symbols: Vec<String>,
}

impl TokenSequence {
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Self {
        Self { symbols: symbols.into_iter().map(Into::into).collect() }
    }

    /// Whitespace-separated symbols.
    pub fn parse(text: &str) -> Self {
        Self::new(text.split_whitespace())
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Indices into [`SYMBOLS`].
    pub fn indices(&self) -> Result<Vec<usize>> {
        self.symbols.iter().map(|s| symbol_index(s)).collect()
    }

    pub fn from_indices(ids: &[usize]) -> Self {
        Self::new(ids.iter().map(|&i| SYMBOLS[i]))
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.symbols.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_display_round_trip() {
        let t = TokenSequence::parse("  a k\ta  ");
        assert_eq!(t.to_string(), "a k a");
        assert_eq!(t.indices().unwrap(), vec![0, 5, 0]);
        assert_eq!(TokenSequence::from_indices(&[0, 5, 0]), t);
        assert!(matches!(TokenSequence::parse("a x").indices(), Err(Error::UnknownToken(s)) if s == "x"));
    }
}
