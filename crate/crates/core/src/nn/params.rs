use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tensor::{Mat, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Mat<T>,
    pub grad: Mat<T>,
}

/// Named trainable tensors plus their accumulated gradients.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), index: BTreeMap::new() }
    }

    /// Registers a tensor. Names are unique; registering one twice is a
    /// programming error.
    pub fn add(&mut self, name: impl Into<String>, value: Mat<T>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        let id = self.params.len();
        let grad = Mat::zeros(value.rows, value.cols);
        self.index.insert(name.clone(), id);
        self.params.push(Param { name, value, grad });
        ParamId(id)
    }

    pub fn xavier(&mut self, name: &str, rows: usize, cols: usize, rng: &mut impl Rng) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| T::c(rng.random_range(-limit..limit))).collect();
        self.add(name, Mat::from_vec(rows, cols, data))
    }

    pub fn normal(&mut self, name: &str, rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> ParamId {
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::c(z * std)
            })
            .collect();
        self.add(name, Mat::from_vec(rows, cols, data))
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.add(name, Mat::zeros(rows, cols))
    }

    pub fn ones(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.add(name, Mat::filled(rows, cols, T::one()))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Mat<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat<T> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Mat<T> {
        &self.params[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn scale_grads(&mut self, s: T) {
        for p in &mut self.params {
            p.grad.data.iter_mut().for_each(|g| *g *= s);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.data.iter())
            .map(|g| g.f64() * g.f64())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            self.scale_grads(T::c(max_norm / norm));
        }
        norm
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Snapshot as float32 named tensors.
    pub fn to_bundle(&self, config_digest: &str) -> ParameterBundle {
        let tensors = self
            .params
            .iter()
            .map(|p| {
                (
                    p.name.clone(),
                    NamedTensor { shape: vec![p.value.rows, p.value.cols], data: p.value.data.iter().map(|x| x.f64() as f32).collect() },
                )
            })
            .collect();
        ParameterBundle { version: BUNDLE_VERSION, config_digest: config_digest.to_string(), tensors }
    }

    /// Overwrites every registered parameter from the bundle. Names and
    /// shapes must match exactly; extra tensors in the bundle are ignored
    /// only when listed in `extras`.
    pub fn load_bundle(&mut self, bundle: &ParameterBundle, extras: &[&str]) -> Result<()> {
        for p in &mut self.params {
            let t = bundle.tensors.get(&p.name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", p.name)))?;
            if t.shape != [p.value.rows, p.value.cols] {
                return Err(Error::Checkpoint(format!("tensor {} has shape {:?}, expected {:?}", p.name, t.shape, [p.value.rows, p.value.cols])));
            }
            p.value.data = t.data.iter().map(|&x| T::c(x as f64)).collect();
        }
        for name in bundle.tensors.keys() {
            if !self.index.contains_key(name) && !extras.contains(&name.as_str()) {
                return Err(Error::Checkpoint(format!("unexpected tensor {name}")));
            }
        }
        Ok(())
    }
}

pub const BUNDLE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn from_mat<T: Real>(m: &Mat<T>) -> Self {
        Self { shape: vec![m.rows, m.cols], data: m.data.iter().map(|x| x.f64() as f32).collect() }
    }

    pub fn to_mat<T: Real>(&self) -> Result<Mat<T>> {
        let (r, c) = match self.shape.as_slice() {
            [r, c] => (*r, *c),
            [n] => (1, *n),
            _ => return Err(Error::Checkpoint(format!("unsupported tensor rank {}", self.shape.len()))),
        };
        Ok(Mat::from_vec(r, c, self.data.iter().map(|&x| T::c(x as f64)).collect()))
    }
}

/// Versioned named-parameter snapshot. Names are kept sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterBundle {
    pub version: u32,
    pub config_digest: String,
    pub tensors: BTreeMap<String, NamedTensor>,
}
