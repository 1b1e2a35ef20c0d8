use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tensor::{Mat, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.98, eps: 1e-9 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient entry was NaN or infinite; parameters and moments were left untouched.
    SkippedNonFinite,
}

/// Adam with bias correction. Frozen parameters are never updated.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    m: Vec<Mat<T>>,
    v: Vec<Mat<T>>,
    step: u64,
    frozen: BTreeSet<ParamId>,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, cfg: AdamConfig) -> Self {
        let shapes: Vec<_> = store.iter().map(|(_, p)| (p.value.rows, p.value.cols)).collect();
        Self {
            cfg,
            m: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
            step: 0,
            frozen: BTreeSet::new(),
        }
    }

    pub fn freeze(&mut self, id: ParamId) {
        self.frozen.insert(id);
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn step(&mut self, store: &mut ParamStore<T>) -> StepOutcome {
        assert_eq!(self.m.len(), store.len(), "optimizer state does not match parameter store");
        let finite = store.iter().all(|(_, p)| p.grad.data.iter().all(|g| g.is_finite()));
        if !finite {
            return StepOutcome::SkippedNonFinite;
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::c(self.cfg.beta1), T::c(self.cfg.beta2));
        let bc1 = T::c(1.0 - self.cfg.beta1.powi(t));
        let bc2 = T::c(1.0 - self.cfg.beta2.powi(t));
        let lr = T::c(self.cfg.lr);
        let eps = T::c(self.cfg.eps);
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            if self.frozen.contains(&ParamId(i)) {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for ((x, &g), (mi, vi)) in p.value.data.iter_mut().zip(&p.grad.data).zip(m.data.iter_mut().zip(v.data.iter_mut())) {
                *mi = b1 * *mi + (T::one() - b1) * g;
                *vi = b2 * *vi + (T::one() - b2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        StepOutcome::Applied
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(vals: &[f64]) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Mat::from_vec(1, vals.len(), vals.to_vec()));
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut s, id) = store(&[1.0, -2.0]);
        let mut adam = Adam::new(&s, AdamConfig::default());
        adam.step(&mut s);
        assert_eq!(s.value(id).data, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let (mut s, id) = store(&[0.0, 0.0, 0.0]);
        s.params_mut()[0].grad = Mat::from_vec(1, 3, vec![0.5, -3.0, 1e-3]);
        let cfg = AdamConfig { lr: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-12 };
        let mut adam = Adam::new(&s, cfg);
        adam.step(&mut s);
        // Closed form: m̂ = g, v̂ = g², update = −lr·g/(|g| + eps).
        for (x, g) in s.value(id).data.iter().zip([0.5f64, -3.0, 1e-3]) {
            let expect = -0.01 * g / (g.abs() + 1e-12);
            assert!((x - expect).abs() < 1e-12, "{x} vs {expect}");
        }
    }

    #[test]
    fn non_finite_gradient_skips() {
        let (mut s, id) = store(&[1.0]);
        s.params_mut()[0].grad = Mat::from_vec(1, 1, vec![f64::NAN]);
        let mut adam = Adam::new(&s, AdamConfig::default());
        assert_eq!(adam.step(&mut s), StepOutcome::SkippedNonFinite);
        assert_eq!(s.value(id).data, vec![1.0]);
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn frozen_params_do_not_move() {
        let (mut s, id) = store(&[1.0]);
        s.params_mut()[0].grad = Mat::from_vec(1, 1, vec![4.0]);
        let mut adam = Adam::new(&s, AdamConfig::default());
        adam.freeze(id);
        adam.step(&mut s);
        assert_eq!(s.value(id).data, vec![1.0]);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let (mut s, id) = store(&[0.3, -0.7]);
            let mut adam = Adam::new(&s, AdamConfig::default());
            for k in 0..50 {
                let x = s.value(id).data.clone();
                s.params_mut()[0].grad = Mat::from_vec(1, 2, vec![2.0 * x[0] + k as f64 * 1e-3, 2.0 * x[1]]);
                adam.step(&mut s);
            }
            s.value(id).data.clone()
        };
        assert_eq!(run(), run());
    }
}
