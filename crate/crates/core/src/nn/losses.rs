use serde::{Deserialize, Serialize};

use super::graph::{sigmoid, Graph, Var};
use super::tensor::{Mat, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    L1,
    Bce,
}

/// Targets for [`sequence_loss`]: class ids per row for cross-entropy,
/// a matrix of the prediction's shape otherwise.
pub enum Target<'a, T> {
    Classes(&'a [usize]),
    Values(&'a Mat<T>),
}

/// Mean loss over the rows marked valid in `mask`, and its gradient with
/// respect to `pred`. Cross-entropy takes raw logits; BCE takes logits and an
/// optional positive-class weight.
pub fn sequence_loss<T: Real>(kind: LossKind, pred: &Mat<T>, target: Target<'_, T>, mask: &[bool], pos_weight: f64) -> Result<(T, Mat<T>)> {
    if mask.len() != pred.rows {
        return Err(Error::Shape(format!("mask has {} entries for {} rows", mask.len(), pred.rows)));
    }
    let valid_rows = mask.iter().filter(|&&m| m).count();
    if valid_rows == 0 {
        return Err(Error::EmptyMask);
    }
    let mut grad = Mat::zeros(pred.rows, pred.cols);
    let mut total = 0.0f64;
    match (kind, target) {
        (LossKind::CrossEntropy, Target::Classes(ids)) => {
            if ids.len() != pred.rows {
                return Err(Error::Shape(format!("{} class targets for {} rows", ids.len(), pred.rows)));
            }
            let n = T::c(valid_rows as f64);
            for r in 0..pred.rows {
                if !mask[r] {
                    continue;
                }
                let id = ids[r];
                if id >= pred.cols {
                    return Err(Error::Invalid(format!("class {id} outside {} logits", pred.cols)));
                }
                let row = pred.row(r);
                let lse = super::graph::log_sum_exp(row);
                total += (lse - row[id]).f64();
                for (j, (gv, &x)) in grad.row_mut(r).iter_mut().zip(row).enumerate() {
                    let p = (x - lse).exp();
                    *gv = (p - if j == id { T::one() } else { T::zero() }) / n;
                }
            }
            Ok((T::c(total / valid_rows as f64), grad))
        }
        (LossKind::L1 | LossKind::Bce, Target::Values(tgt)) => {
            if tgt.shape() != pred.shape() {
                return Err(Error::Shape(format!("target {:?} vs prediction {:?}", tgt.shape(), pred.shape())));
            }
            let count = valid_rows * pred.cols;
            let n = T::c(count as f64);
            let w = T::c(pos_weight);
            for r in 0..pred.rows {
                if !mask[r] {
                    continue;
                }
                for ((gv, &x), &y) in grad.row_mut(r).iter_mut().zip(pred.row(r)).zip(tgt.row(r)) {
                    if kind == LossKind::L1 {
                        let d = x - y;
                        total += d.abs().f64();
                        *gv = if d > T::zero() {
                            T::one() / n
                        } else if d < T::zero() {
                            -T::one() / n
                        } else {
                            T::zero()
                        };
                    } else {
                        // -[w·y·log σ(x) + (1−y)·log(1−σ(x))], written stably.
                        let log_sig = -softplus(-x);
                        let log_one_minus = -softplus(x);
                        total += (-(w * y * log_sig + (T::one() - y) * log_one_minus)).f64();
                        let s = sigmoid(x);
                        *gv = (s * (w * y + T::one() - y) - w * y) / n;
                    }
                }
            }
            Ok((T::c(total / count as f64), grad))
        }
        _ => Err(Error::Invalid(format!("target kind does not fit {kind:?}"))),
    }
}

pub fn sequence_loss_var<T: Real>(g: &mut Graph<T>, kind: LossKind, pred: Var, target: Target<'_, T>, mask: &[bool], pos_weight: f64) -> Result<Var> {
    let (v, grad) = sequence_loss(kind, g.value(pred), target, mask, pos_weight)?;
    Ok(g.fused_scalar(pred, v, grad))
}

fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `mean((x − c)²)` as a tape node.
pub fn mse_to_const<T: Real>(g: &mut Graph<T>, x: Var, c: f64) -> Var {
    let xv = g.value(x);
    let n = xv.len().max(1) as f64;
    let c = T::c(c);
    let value = xv.data.iter().map(|&v| (v - c) * (v - c)).sum::<T>() / T::c(n);
    let grad = xv.map(|v| T::c(2.0) * (v - c) / T::c(n));
    g.fused_scalar(x, value, grad)
}
