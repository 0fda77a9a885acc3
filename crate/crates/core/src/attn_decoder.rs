//! Attention-based baseline decoder and the attention peakedness analyzer.

use rand::Rng;
use serde::{Deserialize, Serialize};
use spdn_tensor::{ParamId, ParamStore, Session, Tensor, Var};

use crate::decode::{self, DecodeMode, DecodeOutput, DecoderConfig, Event};
use crate::error::{Result, SpdnError};
use crate::nn::{xavier, Linear, Lstm, LstmState};

/// Scores and softmax weights of one step over flattened positions.
#[derive(Debug, Clone, Copy)]
pub struct AttentionMap {
    pub scores: Var,
    pub weights: Var,
}

/// Per-sequence views of the feature map.
#[derive(Debug, Clone, Copy)]
pub struct AttnFeatures {
    /// `P×C`: row `i` is the feature vector `h_i`.
    pub rows: Var,
    /// `P×d_a`: `W_h h_i + b`, computed once per sequence.
    pub proj: Var,
}

#[derive(Debug, Clone)]
pub struct AttnDecoder {
    cfg: DecoderConfig,
    pub emb: ParamId,
    pub lstm: Lstm,
    pub w_s: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub w_e: ParamId,
    pub cls: Linear,
}

impl AttnDecoder {
    pub fn new(store: &mut ParamStore, cfg: DecoderConfig, rng: &mut impl Rng) -> Result<Self> {
        let (c, d_s, d_a) = (cfg.channels, cfg.hidden, cfg.attn_dim);
        Ok(AttnDecoder {
            emb: store.add("attn.emb", Tensor::randn(&[cfg.vocab, cfg.embed_dim], 0.1, rng))?,
            lstm: Lstm::new(store, "attn.lstm", c + cfg.embed_dim, d_s, rng)?,
            w_s: store.add("attn.w_s", xavier(&[d_a, d_s], d_s, d_a, rng))?,
            w_h: store.add("attn.w_h", xavier(&[c, d_a], c, d_a, rng))?,
            b: store.add("attn.b", Tensor::zeros(&[d_a]))?,
            w_e: store.add("attn.w_e", xavier(&[d_a], d_a, 1, rng))?,
            cls: Linear::new(store, "attn.cls", d_s, cfg.vocab, rng)?,
            cfg,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    pub fn prepare(&self, s: &mut Session, feats: Var) -> Result<AttnFeatures> {
        let shape = s.shape(feats).to_vec();
        let c = shape[0];
        let positions: usize = shape[1..].iter().product();
        if c != self.cfg.channels {
            return Err(SpdnError::Config(format!("{c} feature channels, decoder expects {}", self.cfg.channels)));
        }
        let flat = s.reshape(feats, &[c, positions])?;
        let rows = s.transpose(flat)?;
        let w_h = s.param(self.w_h);
        let proj = s.matmul(rows, w_h)?;
        let b = s.param(self.b);
        let proj = s.add_broadcast(proj, b)?;
        Ok(AttnFeatures { rows, proj })
    }

    /// `e_i = w_eᵀ tanh(W_s s + W_h h_i + b)` and `α = softmax(e)`.
    pub fn attend(&self, s: &mut Session, state_h: Var, f: &AttnFeatures) -> Result<AttentionMap> {
        let w_s = s.param(self.w_s);
        let ws = s.matmul(w_s, state_h)?;
        let pre = s.add_broadcast(f.proj, ws)?;
        let act = s.tanh(pre);
        let w_e = s.param(self.w_e);
        let scores = s.matmul(act, w_e)?;
        let weights = s.softmax(scores)?;
        Ok(AttentionMap { scores, weights })
    }

    /// `c = Σ α_i h_i`.
    pub fn context(&self, s: &mut Session, weights: Var, f: &AttnFeatures) -> Result<Var> {
        Ok(s.matmul(weights, f.rows)?)
    }

    /// LSTM on `concat(context, emb(prev))`, then the output classifier.
    pub fn decode_step(
        &self,
        s: &mut Session,
        state: LstmState,
        context: Var,
        prev: usize,
    ) -> Result<(Var, LstmState)> {
        let table = s.param(self.emb);
        let e = s.embedding(table, prev)?;
        let x = s.concat(&[context, e], 0)?;
        let next = self.lstm.step(s, x, state)?;
        let logits = self.cls.forward(s, next.h)?;
        Ok((logits, next))
    }

    pub fn decode(&self, s: &mut Session, feats: Var, mode: DecodeMode, trace: bool) -> Result<DecodeOutput> {
        let n = mode.steps(self.cfg.t_max)?;
        let eos = self.cfg.eos();
        decode::watch(s, feats, trace);
        let f = self.prepare(s, feats)?;
        if trace {
            s.take_reads();
        }
        let mut out = DecodeOutput::default();
        let mut state = self.lstm.zero_state(s);
        for t in 0..n {
            let map = self.attend(s, state.h, &f)?;
            let ctx = self.context(s, map.weights, &f)?;
            decode::take_reads(s, trace, &mut out);
            let prev = mode.prev_symbol(t, &out.argmax, eos);
            let (logits, next) = self.decode_step(s, state, ctx, prev)?;
            state = next;
            out.attention.push(map.weights);
            out.events.push(Event::Classify(t));
            let best = out.record_logits(s, logits);
            if mode.stops_at(best, eos) {
                break;
            }
        }
        Ok(out)
    }
}

/// Statistics of one attention distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepPeakedness {
    pub t: usize,
    pub max_w: f64,
    pub entropy: f64,
    pub support: usize,
}

/// Max weight, entropy in nats, and the count of weights ≥ 1% of the max.
pub fn peakedness(t: usize, weights: &[f64]) -> StepPeakedness {
    let max_w =
        if weights.iter().all(|w| w.is_finite()) { weights.iter().copied().fold(0.0, f64::max) } else { f64::NAN };
    let entropy = -weights.iter().filter(|&&w| w > 0.0).map(|&w| w * w.ln()).sum::<f64>();
    let support = weights.iter().filter(|&&w| w >= 0.01 * max_w).count();
    StepPeakedness { t, max_w, entropy: entropy.max(0.0), support }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakednessAggregate {
    pub median_max_w: f64,
    pub mean_entropy: f64,
    pub p90_support: f64,
    pub median_support: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakednessReport {
    pub per_step: Vec<StepPeakedness>,
    pub aggregate: PeakednessAggregate,
}

/// Nearest-rank quantile of a sorted slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl PeakednessReport {
    pub fn from_steps(per_step: Vec<StepPeakedness>) -> Result<Self> {
        if per_step.is_empty() {
            return Err(SpdnError::Usage("no attention steps to analyze".into()));
        }
        if per_step.iter().any(|p| !p.max_w.is_finite() || !p.entropy.is_finite()) {
            return Err(SpdnError::Numerical("non-finite attention weights".into()));
        }
        let sorted = |f: &dyn Fn(&StepPeakedness) -> f64| {
            let mut v: Vec<f64> = per_step.iter().map(f).collect();
            v.sort_by(f64::total_cmp);
            v
        };
        let max_w = sorted(&|p| p.max_w);
        let support = sorted(&|p| p.support as f64);
        let aggregate = PeakednessAggregate {
            median_max_w: quantile(&max_w, 0.5),
            mean_entropy: per_step.iter().map(|p| p.entropy).sum::<f64>() / per_step.len() as f64,
            p90_support: quantile(&support, 0.9),
            median_support: quantile(&support, 0.5),
            steps: per_step.len(),
        };
        Ok(PeakednessReport { per_step, aggregate })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
