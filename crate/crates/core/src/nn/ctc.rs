//! Connectionist temporal classification loss via the forward-backward
//! recursion in log space.

use super::graph::{Graph, Var};
use super::tensor::{Mat, Real};
use crate::error::{Error, Result};

pub struct CtcOutput<T> {
    /// `−log P(labels | logprobs)`.
    pub loss: T,
    /// Gradient of `loss` with respect to each `logprobs` entry.
    pub grad: Mat<T>,
}

/// Minimum number of frames that admits an alignment of `labels`: one per
/// label plus a separating blank between each adjacent repeat.
pub fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

fn lse2<T: Real>(a: T, b: T) -> T {
    if a == T::neg_infinity() {
        return b;
    }
    if b == T::neg_infinity() {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn extended(labels: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(blank);
    for &l in labels {
        ext.push(l);
        ext.push(blank);
    }
    ext
}

fn check(logprobs: &Mat<impl Real>, labels: &[usize], blank: usize) -> Result<()> {
    if blank >= logprobs.cols {
        return Err(Error::Shape(format!("blank id {blank} outside {} classes", logprobs.cols)));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= logprobs.cols || l == blank) {
        return Err(Error::Invalid(format!("CTC label {bad} is blank or outside {} classes", logprobs.cols)));
    }
    let needed = min_frames(labels);
    if logprobs.rows < needed || (logprobs.rows == 0 && labels.is_empty()) {
        return Err(Error::NoAlignment { labels: labels.len(), needed: needed.max(1), frames: logprobs.rows });
    }
    Ok(())
}

/// Log-probability alpha table, `frames × (2U+1)`.
fn forward_table<T: Real>(lp: &Mat<T>, ext: &[usize]) -> Mat<T> {
    let (t_len, s_len) = (lp.rows, ext.len());
    let mut alpha = Mat::filled(t_len, s_len, T::neg_infinity());
    *alpha.at_mut(0, 0) = lp.at(0, ext[0]);
    if s_len > 1 {
        *alpha.at_mut(0, 1) = lp.at(0, ext[1]);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha.at(t - 1, s);
            if s >= 1 {
                a = lse2(a, alpha.at(t - 1, s - 1));
            }
            if s >= 2 && ext[s] != ext[s - 2] {
                a = lse2(a, alpha.at(t - 1, s - 2));
            }
            if a != T::neg_infinity() {
                *alpha.at_mut(t, s) = a + lp.at(t, ext[s]);
            }
        }
    }
    alpha
}

/// `log P(labels | logprobs)` summed over all blank-augmented alignments.
pub fn ctc_log_prob<T: Real>(logprobs: &Mat<T>, labels: &[usize], blank: usize) -> Result<T> {
    check(logprobs, labels, blank)?;
    let ext = extended(labels, blank);
    let alpha = forward_table(logprobs, &ext);
    let last = logprobs.rows - 1;
    let s = ext.len();
    let mut lp = alpha.at(last, s - 1);
    if s > 1 {
        lp = lse2(lp, alpha.at(last, s - 2));
    }
    Ok(lp)
}

/// CTC loss and its gradient with respect to `logprobs` (`frames × classes`).
pub fn ctc_loss<T: Real>(logprobs: &Mat<T>, labels: &[usize], blank: usize) -> Result<CtcOutput<T>> {
    check(logprobs, labels, blank)?;
    let ext = extended(labels, blank);
    let (t_len, s_len) = (logprobs.rows, ext.len());
    let alpha = forward_table(logprobs, &ext);
    let last = t_len - 1;
    let mut log_p = alpha.at(last, s_len - 1);
    if s_len > 1 {
        log_p = lse2(log_p, alpha.at(last, s_len - 2));
    }
    if log_p == T::neg_infinity() {
        return Err(Error::NoAlignment { labels: labels.len(), needed: min_frames(labels), frames: t_len });
    }

    let mut beta = Mat::filled(t_len, s_len, T::neg_infinity());
    *beta.at_mut(last, s_len - 1) = logprobs.at(last, ext[s_len - 1]);
    if s_len > 1 {
        *beta.at_mut(last, s_len - 2) = logprobs.at(last, ext[s_len - 2]);
    }
    for t in (0..last).rev() {
        for s in 0..s_len {
            let mut b = beta.at(t + 1, s);
            if s + 1 < s_len {
                b = lse2(b, beta.at(t + 1, s + 1));
            }
            if s + 2 < s_len && ext[s] != ext[s + 2] {
                b = lse2(b, beta.at(t + 1, s + 2));
            }
            if b != T::neg_infinity() {
                *beta.at_mut(t, s) = b + logprobs.at(t, ext[s]);
            }
        }
    }

    // Occupancy of class k at frame t is the posterior mass of all extended
    // states carrying k; the loss gradient is its negation.
    let mut grad = Mat::zeros(t_len, logprobs.cols);
    for t in 0..t_len {
        for s in 0..s_len {
            let ab = alpha.at(t, s) + beta.at(t, s);
            if ab == T::neg_infinity() {
                continue;
            }
            let occ = (ab - logprobs.at(t, ext[s]) - log_p).exp();
            *grad.at_mut(t, ext[s]) -= occ;
        }
    }
    Ok(CtcOutput { loss: -log_p, grad })
}

/// CTC loss as a tape node over a `frames × classes` log-probability input.
pub fn ctc_loss_var<T: Real>(g: &mut Graph<T>, logprobs: Var, labels: &[usize], blank: usize) -> Result<Var> {
    let out = ctc_loss(g.value(logprobs), labels, blank)?;
    Ok(g.fused_scalar(logprobs, out.loss, out.grad))
}
