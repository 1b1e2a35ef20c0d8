//! Central finite-difference gradient checking.

use super::graph::{Graph, Var};
use super::params::ParamStore;

/// Gradients smaller than this are compared in absolute rather than relative terms.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` against central differences of `f` at `point`,
/// coordinate by coordinate, and reports the worst one.
pub fn grad_check(mut f: impl FnMut(&[f64]) -> f64, point: &[f64], analytic: &[f64], eps: f64) -> GradCheck {
    assert_eq!(point.len(), analytic.len(), "gradient length does not match point");
    let mut x = point.to_vec();
    let mut worst = GradCheck { max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0 };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let up = f(&x);
        x[i] = orig - eps;
        let down = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let err = rel_error(analytic[i], numeric);
        if err > worst.max_rel_error || i == 0 {
            worst = GradCheck { max_rel_error: err, worst_index: i, analytic: analytic[i], numeric };
        }
    }
    worst
}

/// Checks the gradient of a scalar tape function with respect to every
/// parameter element in `store`.
pub fn check_params(store: &mut ParamStore<f64>, eps: f64, mut build: impl FnMut(&mut Graph<f64>, &ParamStore<f64>) -> Var) -> GradCheck {
    store.zero_grads();
    let mut g = Graph::new();
    let out = build(&mut g, store);
    g.backward(out).accumulate_into(store);
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut analytic = Vec::new();
    let mut point = Vec::new();
    for &id in &ids {
        analytic.extend_from_slice(&store.grad(id).data);
        point.extend_from_slice(&store.value(id).data);
    }
    let sizes: Vec<usize> = ids.iter().map(|&id| store.value(id).len()).collect();
    let mut eval = |x: &[f64]| {
        let mut off = 0;
        for (&id, &n) in ids.iter().zip(&sizes) {
            store.value_mut(id).data.copy_from_slice(&x[off..off + n]);
            off += n;
        }
        let mut g = Graph::new();
        let out = build(&mut g, store);
        g.scalar(out)
    };
    let report = grad_check(&mut eval, &point, &analytic, eps);
    eval(&point);
    report
}
