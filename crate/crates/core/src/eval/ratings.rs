use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatingScale {
    /// Five-point opinion score, 1..=5.
    Mos,
    /// Four-point same-speaker judgement, 1..=4.
    Similarity,
}

impl RatingScale {
    pub fn range(self) -> (f64, f64) {
        match self {
            RatingScale::Mos => (1.0, 5.0),
            RatingScale::Similarity => (1.0, 4.0),
        }
    }
}

impl std::str::FromStr for RatingScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mos" => Ok(Self::Mos),
            "similarity" => Ok(Self::Similarity),
            _ => Err(Error::Config(format!("unknown rating scale {s:?} (mos|similarity)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub system_id: String,
    pub listener_id: String,
    pub utt_id: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingsTable {
    pub scale: RatingScale,
    pub rows: Vec<Rating>,
}

pub const RATINGS_HEADER: [&str; 4] = ["system_id", "listener_id", "utt_id", "score"];

impl RatingsTable {
    /// Parses CSV with header `system_id,listener_id,utt_id,score`. Errors
    /// name the offending line (the header is line 1).
    pub fn parse(text: &str, scale: RatingScale) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| Error::Invalid(format!("ratings header: {e}")))?;
        if header.iter().collect::<Vec<_>>() != RATINGS_HEADER {
            return Err(Error::Invalid(format!("ratings header must be {}", RATINGS_HEADER.join(","))));
        }
        let (lo, hi) = scale.range();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Invalid(format!("ratings: {e}")))?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != 4 {
                return Err(Error::Invalid(format!("ratings line {line}: expected 4 fields, got {}", rec.len())));
            }
            let score: f64 = rec[3].parse().map_err(|_| Error::Invalid(format!("ratings line {line}: score {:?} is not a number", &rec[3])))?;
            if !(lo..=hi).contains(&score) {
                return Err(Error::Invalid(format!("ratings line {line}: score {score} outside {lo}..{hi}")));
            }
            rows.push(Rating { system_id: rec[0].to_string(), listener_id: rec[1].to_string(), utt_id: rec[2].to_string(), score });
        }
        Ok(Self { scale, rows })
    }

    pub fn read(path: impl AsRef<Path>, scale: RatingScale) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?, scale)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemScore {
    pub system_id: String,
    pub n: usize,
    pub mean: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95: f64,
}

/// Per-system mean and `1.96·s/√n` interval (sample standard deviation;
/// zero width for a single rating), ordered by `system_id`.
pub fn aggregate_ratings(table: &RatingsTable) -> Vec<SystemScore> {
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &table.rows {
        groups.entry(&r.system_id).or_default().push(r.score);
    }
    groups
        .into_iter()
        .map(|(id, xs)| {
            let n = xs.len();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let ci95 = if n > 1 {
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                1.96 * (var / n as f64).sqrt()
            } else {
                0.0
            };
            SystemScore { system_id: id.to_string(), n, mean, ci95 }
        })
        .collect()
}

pub fn ratings_text(scores: &[SystemScore]) -> String {
    let mut s = format!("{:<16} {:>5} {:>7} {:>7}\n", "system", "n", "mean", "ci95");
    for r in scores {
        s += &format!("{:<16} {:>5} {:>7.3} {:>7.3}\n", r.system_id, r.n, r.mean, r.ci95);
    }
    s
}
