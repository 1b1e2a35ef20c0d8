use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditOp {
    Match,
    Sub,
    Ins,
    Del,
}

/// One column of an alignment; `reference`/`hypothesis` are `None` for
/// insertions/deletions respectively.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignedPair<T> {
    pub op: EditOp,
    pub reference: Option<T>,
    pub hypothesis: Option<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport<T> {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
    pub pairs: Vec<AlignedPair<T>>,
}

impl<T> AlignmentReport<T> {
    pub fn distance(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// Error rate in percent; `None` for an empty reference.
    pub fn rate(&self) -> Option<f64> {
        (self.ref_len > 0).then(|| 100.0 * self.distance() as f64 / self.ref_len as f64)
    }
}

/// Unit-cost Levenshtein alignment. Among equal-cost paths the backtrace
/// prefers substitution (or match), then insertion, then deletion.
pub fn edit_distance<T: PartialEq + Clone>(reference: &[T], hypothesis: &[T]) -> AlignmentReport<T> {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            d[i][j] = sub.min(d[i][j - 1] + 1).min(d[i - 1][j] + 1);
        }
    }
    let (mut i, mut j) = (n, m);
    let mut pairs = Vec::with_capacity(n.max(m));
    let (mut s, mut del, mut ins) = (0, 0, 0);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if d[i][j] == d[i - 1][j - 1] + usize::from(!same) {
                if !same {
                    s += 1;
                }
                pairs.push(AlignedPair { op: if same { EditOp::Match } else { EditOp::Sub }, reference: Some(reference[i - 1].clone()), hypothesis: Some(hypothesis[j - 1].clone()) });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && d[i][j] == d[i][j - 1] + 1 {
            ins += 1;
            pairs.push(AlignedPair { op: EditOp::Ins, reference: None, hypothesis: Some(hypothesis[j - 1].clone()) });
            j -= 1;
        } else {
            del += 1;
            pairs.push(AlignedPair { op: EditOp::Del, reference: Some(reference[i - 1].clone()), hypothesis: None });
            i -= 1;
        }
    }
    pairs.reverse();
    AlignmentReport { substitutions: s, deletions: del, insertions: ins, ref_len: n, pairs }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    /// Non-whitespace characters.
    Char,
    /// Whitespace-separated words.
    Word,
}

pub fn units(text: &str, unit: Unit) -> Vec<String> {
    match unit {
        Unit::Char => text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect(),
        Unit::Word => text.split_whitespace().map(String::from).collect(),
    }
}

/// Error rate in percent at the given unit.
pub fn cer_wer(reference: &str, hypothesis: &str, unit: Unit) -> Result<f64> {
    let r = units(reference, unit);
    if r.is_empty() {
        return Err(Error::Invalid("empty reference".into()));
    }
    let report = edit_distance(&r, &units(hypothesis, unit));
    Ok(report.rate().expect("non-empty reference"))
}
