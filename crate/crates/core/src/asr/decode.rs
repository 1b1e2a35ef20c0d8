use serde::{Deserialize, Serialize};

use super::lm::{NgramLm, EOS};
use super::model::AsrModel;
use super::{id_symbol, BLANK, EOS_ID, SOS};
use crate::error::{Error, Result};
use crate::nn::{Ctx, Mat};
use crate::tokens::{TokenSequence, SYMBOLS};
use crate::train::features;
use crate::Waveform;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub ctc_decode_weight: f64,
    pub lm_weight: f64,
    /// Output length cap as a fraction of encoder frames.
    pub max_output_ratio: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { beam_size: 5, ctc_decode_weight: 0.3, lm_weight: 0.0, max_output_ratio: 1.0 }
    }
}

impl DecodeConfig {
    pub fn greedy() -> Self {
        Self { beam_size: 1, ctc_decode_weight: 0.0, lm_weight: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || !(0.0..=1.0).contains(&self.ctc_decode_weight) || self.lm_weight < 0.0 || !(self.max_output_ratio > 0.0) {
            return Err(Error::Config(format!("invalid decode config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recognition {
    pub tokens: TokenSequence,
    pub score: f64,
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Prefix probabilities of label sequences under per-frame CTC posteriors.
pub struct CtcPrefixScorer {
    lp: Mat<f64>,
    blank: usize,
}

/// Forward variables of one prefix: paths ending in a label (`r_n`) or a
/// blank (`r_b`) at every frame, and the log prefix probability.
#[derive(Clone, Debug)]
pub struct CtcState {
    r_n: Vec<f64>,
    r_b: Vec<f64>,
    pub prefix: f64,
    last: Option<usize>,
}

pub fn ctc_prefix_scorer(logprobs: Mat<f64>, blank: usize) -> CtcPrefixScorer {
    CtcPrefixScorer { lp: logprobs, blank }
}

impl CtcPrefixScorer {
    pub fn frames(&self) -> usize {
        self.lp.rows
    }

    pub fn initial(&self) -> CtcState {
        let mut r_b = Vec::with_capacity(self.lp.rows);
        let mut acc = 0.0;
        for t in 0..self.lp.rows {
            acc += self.lp.at(t, self.blank);
            r_b.push(acc);
        }
        CtcState { r_n: vec![f64::NEG_INFINITY; self.lp.rows], r_b, prefix: 0.0, last: None }
    }

    pub fn extend(&self, st: &CtcState, c: usize) -> CtcState {
        let t_max = self.lp.rows;
        let mut r_n = vec![f64::NEG_INFINITY; t_max];
        let mut r_b = vec![f64::NEG_INFINITY; t_max];
        if t_max == 0 {
            return CtcState { r_n, r_b, prefix: f64::NEG_INFINITY, last: Some(c) };
        }
        let start_empty = st.last.is_none();
        if start_empty {
            r_n[0] = self.lp.at(0, c);
        }
        let mut psi = r_n[0];
        for t in 1..t_max {
            let phi = if st.last == Some(c) { st.r_b[t - 1] } else { log_add(st.r_b[t - 1], st.r_n[t - 1]) };
            r_n[t] = log_add(r_n[t - 1], phi) + self.lp.at(t, c);
            r_b[t] = log_add(r_b[t - 1], r_n[t - 1]) + self.lp.at(t, self.blank);
            psi = log_add(psi, phi + self.lp.at(t, c));
        }
        CtcState { r_n, r_b, prefix: psi, last: Some(c) }
    }

    /// `log P(prefix)` as a complete label sequence.
    pub fn full(&self, st: &CtcState) -> f64 {
        match self.lp.rows {
            0 => {
                if st.last.is_none() {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            t => log_add(st.r_n[t - 1], st.r_b[t - 1]),
        }
    }
}

#[derive(Clone)]
struct Hyp {
    ids: Vec<usize>,
    score: f64,
    ctc: Option<CtcState>,
}

struct Search<'a> {
    model: &'a AsrModel,
    enc: Mat<f32>,
    ctc: Option<CtcPrefixScorer>,
    lm: Option<&'a NgramLm>,
    cfg: DecodeConfig,
}

impl Search<'_> {
    fn att_log_probs(&self, ids: &[usize]) -> Result<Vec<f64>> {
        let mut ctx = Ctx::eval(&self.model.store);
        let enc = ctx.g.constant(self.enc.clone());
        let mut prefix = vec![SOS];
        prefix.extend_from_slice(ids);
        let logits = self.model.decoder_logits(&mut ctx, enc, &prefix)?;
        let lp = ctx.g.log_softmax_rows(logits);
        let v = ctx.g.value(lp);
        Ok(v.row(v.rows - 1).iter().map(|&x| x as f64).collect())
    }

    fn lm_term(&self, ids: &[usize], next: usize) -> f64 {
        let Some(lm) = self.lm else { return 0.0 };
        if self.cfg.lm_weight == 0.0 {
            return 0.0;
        }
        let prefix: Vec<&str> = ids.iter().map(|&i| SYMBOLS[id_symbol(i).expect("symbol id")]).collect();
        if next == EOS_ID {
            if lm.has_eos() {
                lm.log_prob(&prefix, EOS)
            } else {
                0.0
            }
        } else {
            lm.log_prob(&prefix, SYMBOLS[id_symbol(next).expect("symbol id")])
        }
    }

    /// Returns every finished hypothesis with its joint score.
    fn run(&self, beam: usize) -> Result<Vec<(Vec<usize>, f64)>> {
        let w = self.cfg.ctc_decode_weight;
        let max_len = ((self.cfg.max_output_ratio * self.enc.rows as f64).floor() as usize).max(1);
        let mut hyps = vec![Hyp { ids: Vec::new(), score: 0.0, ctc: self.ctc.as_ref().map(|c| c.initial()) }];
        let mut ended: Vec<(Vec<usize>, f64)> = Vec::new();
        for step in 0..=max_len {
            let mut cands: Vec<Hyp> = Vec::new();
            for h in &hyps {
                let att = self.att_log_probs(&h.ids)?;
                for c in (1..SOS).chain([EOS_ID]) {
                    if step == max_len && c != EOS_ID {
                        continue;
                    }
                    let (ctc_delta, state) = match (&self.ctc, &h.ctc) {
                        (Some(scorer), Some(st)) if w > 0.0 => {
                            if c == EOS_ID {
                                (scorer.full(st) - st.prefix, None)
                            } else {
                                let ns = scorer.extend(st, c);
                                (ns.prefix - st.prefix, Some(ns))
                            }
                        }
                        _ => (0.0, None),
                    };
                    let mut score = h.score + (1.0 - w) * att[c] + self.cfg.lm_weight * self.lm_term(&h.ids, c);
                    if w > 0.0 {
                        score += w * ctc_delta;
                    }
                    let mut ids = h.ids.clone();
                    ids.push(c);
                    cands.push(Hyp { ids, score, ctc: state });
                }
            }
            cands.sort_by(|a, b| b.score.total_cmp(&a.score));
            cands.truncate(beam);
            hyps.clear();
            for c in cands {
                if *c.ids.last().unwrap() == EOS_ID {
                    let mut ids = c.ids;
                    ids.pop();
                    ended.push((ids, c.score));
                } else {
                    hyps.push(c);
                }
            }
            let best_ended = ended.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
            let best_active = hyps.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
            // Every score increment is a log-probability, so no active
            // hypothesis can overtake a finished one that already leads.
            if hyps.is_empty() || best_ended >= best_active {
                break;
            }
        }
        Ok(ended)
    }
}

pub fn recognize(w: &Waveform, model: &AsrModel, cfg: &DecodeConfig, lm: Option<&NgramLm>) -> Result<Recognition> {
    if w.is_empty() {
        return Ok(Recognition { tokens: TokenSequence::default(), score: 0.0 });
    }
    recognize_features(&features(w, &model.cfg.features)?, model, cfg, lm)
}

/// Joint attention + CTC-prefix + LM beam search over log-mel features.
pub fn recognize_features(feats: &Mat<f32>, model: &AsrModel, cfg: &DecodeConfig, lm: Option<&NgramLm>) -> Result<Recognition> {
    cfg.validate()?;
    if feats.rows == 0 {
        return Ok(Recognition { tokens: TokenSequence::default(), score: 0.0 });
    }
    let input = model.encoder_input(feats);
    let mut ctx = Ctx::eval(&model.store);
    let enc_var = model.encode(&mut ctx, &input)?;
    let ctc = if cfg.ctc_decode_weight > 0.0 {
        let lp = model.ctc_log_probs(&mut ctx, enc_var);
        Some(ctc_prefix_scorer(ctx.g.value(lp).cast::<f64>(), BLANK))
    } else {
        None
    };
    let enc = ctx.g.value(enc_var).clone();
    let search = Search { model, enc, ctc, lm, cfg: *cfg };
    let mut finals = search.run(cfg.beam_size)?;
    if cfg.beam_size > 1 {
        finals.extend(search.run(1)?);
    }
    let (ids, score) = finals
        .into_iter()
        .fold(None::<(Vec<usize>, f64)>, |best, f| match best {
            Some(b) if b.1 >= f.1 => Some(b),
            _ => Some(f),
        })
        .expect("search always finishes a hypothesis");
    let tokens = TokenSequence::new(ids.iter().map(|&i| SYMBOLS[id_symbol(i).expect("symbol id")]));
    Ok(Recognition { tokens, score })
}

/// Pure attention decoding: the arg-max symbol at every step.
pub fn greedy_attention(feats: &Mat<f32>, model: &AsrModel, max_output_ratio: f64) -> Result<Recognition> {
    if feats.rows == 0 {
        return Ok(Recognition { tokens: TokenSequence::default(), score: 0.0 });
    }
    let input = model.encoder_input(feats);
    let mut ctx = Ctx::eval(&model.store);
    let enc_var = model.encode(&mut ctx, &input)?;
    let enc = ctx.g.value(enc_var).clone();
    let search = Search { model, enc, ctc: None, lm: None, cfg: DecodeConfig { max_output_ratio, ..DecodeConfig::greedy() } };
    let max_len = ((max_output_ratio * search.enc.rows as f64).floor() as usize).max(1);
    let mut ids = Vec::new();
    let mut score = 0.0;
    loop {
        let att = search.att_log_probs(&ids)?;
        let allowed: Vec<usize> = if ids.len() == max_len { vec![EOS_ID] } else { (1..SOS).chain([EOS_ID]).collect() };
        let best = allowed.into_iter().fold(None::<usize>, |b, c| match b {
            Some(x) if att[x] >= att[c] => Some(x),
            _ => Some(c),
        });
        let c = best.expect("non-empty candidate set");
        score += att[c];
        if c == EOS_ID {
            break;
        }
        ids.push(c);
    }
    Ok(Recognition { tokens: TokenSequence::new(ids.iter().map(|&i| SYMBOLS[id_symbol(i).expect("symbol id")])), score })
}
