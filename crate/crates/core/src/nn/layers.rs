use std::collections::HashMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var, MASK_LOGIT};
use super::params::{ParamId, ParamStore};
use super::tensor::{Mat, Real};
use crate::error::{Error, Result};

pub type Rng = rand_chacha::ChaCha8Rng;

/// One forward pass: the tape, the parameters it reads, and (in training
/// mode) the generator driving dropout.
pub struct Ctx<'a, T: Real> {
    pub g: Graph<T>,
    store: &'a ParamStore<T>,
    rng: Option<&'a mut Rng>,
    cache: HashMap<ParamId, Var>,
}

impl<'a, T: Real> Ctx<'a, T> {
    pub fn eval(store: &'a ParamStore<T>) -> Self {
        Self { g: Graph::new(), store, rng: None, cache: HashMap::new() }
    }

    pub fn train(store: &'a ParamStore<T>, rng: &'a mut Rng) -> Self {
        Self { g: Graph::new(), store, rng: Some(rng), cache: HashMap::new() }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.cache.get(&id) {
            return v;
        }
        let v = self.g.param(self.store, id);
        self.cache.insert(id, v);
        v
    }

    /// Inverted dropout; identity outside training or for `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        let Some(rng) = self.rng.as_deref_mut() else { return x };
        if p <= 0.0 {
            return x;
        }
        let (r, c) = self.g.shape(x);
        let keep = T::c(1.0 / (1.0 - p));
        let mask = (0..r * c).map(|_| if rng.random::<f64>() < p { T::zero() } else { keep }).collect();
        let m = self.g.constant(Mat::from_vec(r, c, mask));
        self.g.mul(x, m)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut Rng) -> Self {
        let w = store.xavier(&format!("{name}.w"), d_in, d_out, rng);
        let b = bias.then(|| store.zeros(&format!("{name}.b"), 1, d_out));
        Self { w, b, d_in, d_out }
    }

    /// `x · W + b` for `x` of shape `rows × d_in`.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<T>, x: Var) -> Var {
        let w = ctx.p(self.w);
        let y = ctx.g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = ctx.p(b);
                ctx.g.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d: usize) -> Self {
        Self { gain: store.ones(&format!("{name}.gain"), 1, d), bias: store.zeros(&format!("{name}.bias"), 1, d) }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<T>, x: Var) -> Var {
        let n = ctx.g.layer_norm(x, 1e-5);
        let gain = ctx.p(self.gain);
        let bias = ctx.p(self.bias);
        let y = ctx.g.mul_row(n, gain);
        ctx.g.add_row(y, bias)
    }
}

/// Channels-first 1-D convolution with "same" padding.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub k: usize,
    pub dilation: usize,
}

impl Conv1d {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, c_in: usize, c_out: usize, k: usize, dilation: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / ((c_in + c_out) * k) as f64).sqrt();
        let data = (0..c_out * c_in * k).map(|_| T::c(rng.random_range(-limit..limit))).collect();
        let w = store.add(format!("{name}.w"), Mat::from_vec(c_out, c_in * k, data));
        let b = store.zeros(&format!("{name}.b"), c_out, 1);
        Self { w, b, k, dilation }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<T>, x: Var) -> Var {
        let span = self.dilation * (self.k - 1);
        let left = span / 2;
        let w = ctx.p(self.w);
        let b = ctx.p(self.b);
        let y = ctx.g.conv1d(x, w, self.k, self.dilation, left, span - left);
        ctx.g.add_col(y, b)
    }
}

/// Sinusoidal positional encodings for positions `offset..offset + len`.
pub fn positional_encoding<T: Real>(len: usize, d: usize, offset: usize) -> Mat<T> {
    positional_encoding_scaled(len, d, offset, 1.0)
}

/// Sinusoidal encoding of positions `(p + offset) · scale`.
pub fn positional_encoding_scaled<T: Real>(len: usize, d: usize, offset: usize, scale: f64) -> Mat<T> {
    let mut pe = Mat::zeros(len, d);
    for p in 0..len {
        let pos = (p + offset) as f64 * scale;
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            *pe.at_mut(p, i) = T::c(if i % 2 == 0 { (pos / rate).sin() } else { (pos / rate).cos() });
        }
    }
    pe
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackMode {
    Encoder,
    DecoderWithCrossAttention,
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d: usize, heads: usize, rng: &mut Rng) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), d, d, true, rng),
            k: Linear::new(store, &format!("{name}.k"), d, d, true, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, true, rng),
            o: Linear::new(store, &format!("{name}.o"), d, d, true, rng),
            heads,
        }
    }

    /// Returns the attended output and the head-averaged attention weights
    /// (`queries × keys`). `bias` is an additive logit mask of the same shape.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<T>, xq: Var, xkv: Var, bias: Option<&Mat<T>>, dropout: f64) -> (Var, Var) {
        let q = self.q.forward(ctx, xq);
        let k = self.k.forward(ctx, xkv);
        let v = self.v.forward(ctx, xkv);
        let d = ctx.g.shape(q).1;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let bias = bias.map(|b| ctx.g.constant(b.clone()));
        let mut ctxs = Vec::with_capacity(self.heads);
        let mut avg: Option<Var> = None;
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (ctx.g.slice_cols(q, h * dh, dh), ctx.g.slice_cols(k, h * dh, dh), ctx.g.slice_cols(v, h * dh, dh))
            };
            let s = ctx.g.matmul_t(qh, false, kh, true);
            let mut s = ctx.g.scale(s, scale);
            if let Some(b) = bias {
                s = ctx.g.add(s, b);
            }
            let p = ctx.g.softmax_rows(s);
            avg = Some(match avg {
                None => p,
                Some(a) => ctx.g.add(a, p),
            });
            let p = ctx.dropout(p, dropout);
            ctxs.push(ctx.g.matmul(p, vh));
        }
        let cat = if ctxs.len() == 1 { ctxs[0] } else { ctx.g.concat_cols(&ctxs) };
        let out = self.o.forward(ctx, cat);
        let weights = ctx.g.scale(avg.expect("at least one head"), 1.0 / self.heads as f64);
        (out, weights)
    }
}

#[derive(Clone, Debug)]
struct Block {
    ln_self: LayerNorm,
    self_attn: MultiHeadAttention,
    cross: Option<(LayerNorm, MultiHeadAttention)>,
    ln_ff: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

/// Pre-layer-norm Transformer stack with sinusoidal positions added at the input.
#[derive(Clone, Debug)]
pub struct TransformerStack {
    pub cfg: TransformerConfig,
    pub mode: StackMode,
    blocks: Vec<Block>,
    ln_out: LayerNorm,
}

pub struct Memory<'m> {
    pub value: Var,
    /// Valid key positions of the memory; `None` means all valid.
    pub mask: Option<&'m [bool]>,
}

pub struct StackOutput {
    pub out: Var,
    pub self_attention: Vec<Var>,
    pub cross_attention: Vec<Var>,
}

impl TransformerStack {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, cfg: TransformerConfig, mode: StackMode, rng: &mut Rng) -> Result<Self> {
        if cfg.heads == 0 || cfg.d_model % cfg.heads != 0 {
            return Err(Error::Config(format!("{name}: d_model {} not divisible by heads {}", cfg.d_model, cfg.heads)));
        }
        let d = cfg.d_model;
        let blocks = (0..cfg.layers)
            .map(|l| {
                let p = format!("{name}.{l}");
                Block {
                    ln_self: LayerNorm::new(store, &format!("{p}.ln_self"), d),
                    self_attn: MultiHeadAttention::new(store, &format!("{p}.self"), d, cfg.heads, rng),
                    cross: (mode == StackMode::DecoderWithCrossAttention)
                        .then(|| (LayerNorm::new(store, &format!("{p}.ln_cross"), d), MultiHeadAttention::new(store, &format!("{p}.cross"), d, cfg.heads, rng))),
                    ln_ff: LayerNorm::new(store, &format!("{p}.ln_ff"), d),
                    ff1: Linear::new(store, &format!("{p}.ff1"), d, cfg.d_ff, true, rng),
                    ff2: Linear::new(store, &format!("{p}.ff2"), cfg.d_ff, d, true, rng),
                }
            })
            .collect();
        let ln_out = LayerNorm::new(store, &format!("{name}.ln_out"), d);
        Ok(Self { cfg, mode, blocks, ln_out })
    }

    /// `x` is `len × d_model`; `mask` marks valid positions of `x`.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<T>, x: Var, mask: Option<&[bool]>, memory: Option<Memory<'_>>) -> Result<StackOutput> {
        self.forward_scaled(ctx, x, mask, memory, 1.0)
    }

    /// As [`forward`](Self::forward) with input positions multiplied by `position_scale`.
    pub fn forward_scaled<T: Real>(&self, ctx: &mut Ctx<T>, x: Var, mask: Option<&[bool]>, memory: Option<Memory<'_>>, position_scale: f64) -> Result<StackOutput> {
        let (len, d) = ctx.g.shape(x);
        if d != self.cfg.d_model {
            return Err(Error::Shape(format!("inputs have width {d}, d_model is {}", self.cfg.d_model)));
        }
        if let Some(m) = mask {
            if m.len() != len {
                return Err(Error::Shape(format!("mask has {} entries for {len} input positions", m.len())));
            }
        }
        let causal = self.mode == StackMode::DecoderWithCrossAttention;
        let self_bias = attention_bias::<T>(len, len, mask, causal);
        let cross_bias = match (&memory, self.mode) {
            (Some(mem), StackMode::DecoderWithCrossAttention) => {
                let mlen = ctx.g.shape(mem.value).0;
                if ctx.g.shape(mem.value).1 != d {
                    return Err(Error::Shape(format!("memory width {} differs from d_model {d}", ctx.g.shape(mem.value).1)));
                }
                if let Some(mm) = mem.mask {
                    if mm.len() != mlen {
                        return Err(Error::Shape(format!("memory mask has {} entries for {mlen} memory positions", mm.len())));
                    }
                }
                attention_bias::<T>(len, mlen, mem.mask, false)
            }
            (None, StackMode::DecoderWithCrossAttention) => return Err(Error::Shape("decoder stack needs a memory input".into())),
            (Some(_), StackMode::Encoder) => return Err(Error::Shape("encoder stack takes no memory".into())),
            (None, StackMode::Encoder) => None,
        };
        let pe = ctx.g.constant(positional_encoding_scaled(len, d, 0, position_scale));
        let mut h = ctx.g.add(x, pe);
        h = ctx.dropout(h, self.cfg.dropout);
        let mut self_attention = Vec::new();
        let mut cross_attention = Vec::new();
        for b in &self.blocks {
            let n = b.ln_self.forward(ctx, h);
            let (a, w) = b.self_attn.forward(ctx, n, n, self_bias.as_ref(), self.cfg.dropout);
            let a = ctx.dropout(a, self.cfg.dropout);
            h = ctx.g.add(h, a);
            self_attention.push(w);
            if let (Some((ln, attn)), Some(mem)) = (&b.cross, &memory) {
                let n = ln.forward(ctx, h);
                let (a, w) = attn.forward(ctx, n, mem.value, cross_bias.as_ref(), self.cfg.dropout);
                let a = ctx.dropout(a, self.cfg.dropout);
                h = ctx.g.add(h, a);
                cross_attention.push(w);
            }
            let n = b.ln_ff.forward(ctx, h);
            let f = b.ff1.forward(ctx, n);
            let f = ctx.g.relu(f);
            let f = ctx.dropout(f, self.cfg.dropout);
            let f = b.ff2.forward(ctx, f);
            h = ctx.g.add(h, f);
        }
        let out = self.ln_out.forward(ctx, h);
        Ok(StackOutput { out, self_attention, cross_attention })
    }
}

fn attention_bias<T: Real>(q_len: usize, k_len: usize, key_mask: Option<&[bool]>, causal: bool) -> Option<Mat<T>> {
    if key_mask.is_none() && !causal {
        return None;
    }
    let neg = T::c(MASK_LOGIT);
    let mut b = Mat::zeros(q_len, k_len);
    for i in 0..q_len {
        for j in 0..k_len {
            let masked = key_mask.is_some_and(|m| !m[j]) || (causal && j > i);
            if masked {
                *b.at_mut(i, j) = neg;
            }
        }
    }
    Some(b)
}

pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
