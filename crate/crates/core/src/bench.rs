//! Analytic FLOPs model, decode-time measurement and feature-read instrumentation.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::Serialize;
use spdn_tensor::{Session, Tensor};

use crate::attn_decoder::quantile;
use crate::decode::DecodeMode;
use crate::error::{Result, SpdnError};
use crate::model::{Model, ModelConfig, Variant};

pub const FLOP_CONVENTION: &str = "mul1_add1_nl4";
/// Cost of one elementwise nonlinearity.
pub const NONLINEAR: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Dims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub d_s: usize,
    pub d_a: usize,
    pub d_p: usize,
    pub d_e: usize,
    pub v: usize,
    pub k: usize,
    pub pau_h1: usize,
    pub pau_h2: usize,
}

impl Dims {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        let (h, w) = cfg.feature_extents();
        let d = cfg.decoder;
        Dims {
            c: cfg.encoder.channels(),
            h,
            w,
            d_s: d.hidden,
            d_a: d.attn_dim,
            d_p: d.pos_dim,
            d_e: d.embed_dim,
            v: d.vocab,
            k: d.k,
            pau_h1: d.pau_hidden[0],
            pau_h2: d.pau_hidden[1],
        }
    }

    pub fn positions(&self) -> u64 {
        (self.h * self.w) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnalyticFlops {
    pub per_step: u64,
    /// Once-per-sequence cost outside the step loop.
    pub fixed: u64,
    /// Sequence length → `per_step · T + fixed`.
    pub per_seq: BTreeMap<usize, u64>,
    /// Named per-step terms (summing to `per_step`) and fixed terms (prefixed `fixed_`).
    pub formula_terms: BTreeMap<String, u64>,
}

/// LSTM cell: two gate products, two bias/sum adds, five gate nonlinearities,
/// and four elementwise state updates per unit.
pub fn lstm_flops(n_in: usize, d: usize) -> u64 {
    let (n_in, d) = (n_in as u64, d as u64);
    8 * d * (n_in + d) + 8 * d + 5 * NONLINEAR * d + 4 * d
}

fn linear(n_in: usize, n_out: usize) -> u64 {
    (2 * n_in * n_out + n_out) as u64
}

/// Three-layer point MLP with tanh after every layer.
fn point_mlp(n_in: usize, dims: &Dims) -> u64 {
    let out = 2 * dims.k;
    linear(n_in, dims.pau_h1)
        + linear(dims.pau_h1, dims.pau_h2)
        + linear(dims.pau_h2, out)
        + NONLINEAR * (dims.pau_h1 + dims.pau_h2 + out) as u64
}

pub fn flops_model(variant: Variant, dims: &Dims, steps: &[usize]) -> AnalyticFlops {
    let (c, k) = (dims.c as u64, dims.k as u64);
    let p = dims.positions();
    let mut terms: Vec<(&str, u64)> = Vec::new();
    let mut fixed_terms: Vec<(&str, u64)> = Vec::new();
    let fuse = if dims.k > 1 { 2 * k * c * c } else { 0 };
    match variant {
        Variant::Attention => {
            let (d_s, d_a) = (dims.d_s as u64, dims.d_a as u64);
            terms.push(("attn_scores", p * (2 * c * d_a + 2 * d_s * d_a + 3 * d_a)));
            terms.push(("attn_softmax", 5 * p));
            terms.push(("attn_context", 2 * p * c));
            terms.push(("lstm", lstm_flops(dims.c + dims.d_e, dims.d_s)));
            terms.push(("classifier", linear(dims.d_s, dims.v)));
        }
        Variant::Serial => {
            terms.push(("pau", point_mlp(dims.k * dims.c + dims.d_p, dims) + 2 * k));
            terms.push(("point_update", 4 * k + if dims.k > 1 { 2 * k } else { 0 }));
            terms.push(("bilinear", 12 * k * c));
            terms.push(("fuse", fuse));
            terms.push(("lstm", lstm_flops(dims.c + dims.d_e, dims.d_s)));
            terms.push(("classifier", linear(dims.d_s, dims.v)));
        }
        Variant::Parallel => {
            terms.push(("point_head", point_mlp(dims.c + dims.d_p, dims)));
            terms.push(("bilinear", 12 * k * c));
            terms.push(("fuse", fuse));
            terms.push(("classifier", linear(dims.c, dims.v)));
            fixed_terms.push(("pooling", p * c + c));
        }
    }
    let per_step = terms.iter().map(|t| t.1).sum();
    let fixed = fixed_terms.iter().map(|t| t.1).sum();
    let mut formula_terms: BTreeMap<String, u64> = terms.iter().map(|&(n, v)| (n.to_string(), v)).collect();
    formula_terms.extend(fixed_terms.iter().map(|&(n, v)| (format!("fixed_{n}"), v)));
    let per_seq = steps.iter().map(|&t| (t, per_step * t as u64 + fixed)).collect();
    AnalyticFlops { per_step, fixed, per_seq, formula_terms }
}

/// Sum of the named terms; the per-step ones re-add to `per_step`.
pub fn recompute(a: &AnalyticFlops, t: usize) -> u64 {
    let (fixed, step): (Vec<_>, Vec<_>) = a.formula_terms.iter().partition(|(n, _)| n.starts_with("fixed_"));
    step.iter().map(|(_, v)| **v).sum::<u64>() * t as u64 + fixed.iter().map(|(_, v)| **v).sum::<u64>()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Measured {
    pub steps: usize,
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
    pub reps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Smallest observable positive step of the monotonic clock.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..1000 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

/// Greedy decode of exactly `steps` steps over precomputed features, timed per image.
pub fn measure(model: &Model, feats: &[Tensor], steps: usize, warmup: usize, reps: usize) -> Result<Measured> {
    if feats.is_empty() || reps == 0 {
        return Err(SpdnError::Usage("measurement needs features and at least one repetition".into()));
    }
    let run = |i: usize| -> Result<Duration> {
        let started = Instant::now();
        let mut s = Session::inference(&model.store);
        let f = s.constant(feats[i % feats.len()].clone());
        let out = model.decode(&mut s, f, DecodeMode::Fixed(steps), false)?;
        std::hint::black_box(&out);
        Ok(started.elapsed())
    };
    for i in 0..warmup {
        run(i)?;
    }
    let mut ms = Vec::with_capacity(reps);
    for i in 0..reps {
        ms.push(run(i)?.as_secs_f64() * 1e3);
    }
    ms.sort_by(f64::total_cmp);
    let median_ms = quantile(&ms, 0.5);
    let resolution_ms = timer_resolution().as_secs_f64() * 1e3;
    let warning = (resolution_ms > 0.01 * median_ms)
        .then(|| format!("timer resolution {resolution_ms:.6} ms exceeds 1% of the median"));
    Ok(Measured { steps, median_ms, p10_ms: quantile(&ms, 0.1), p90_ms: quantile(&ms, 0.9), reps, warning })
}

/// Encoder output of each image, computed once so timing isolates the decoder.
pub fn encode_all(model: &Model, images: &[Tensor]) -> Result<Vec<Tensor>> {
    images
        .iter()
        .map(|img| {
            let mut s = Session::inference(&model.store);
            let f = model.features(&mut s, img)?;
            Ok(s.value(f).clone())
        })
        .collect()
}

/// Distinct feature positions read by each decode step.
pub fn instrument_reads(model: &Model, feats: &Tensor, steps: usize) -> Result<Vec<usize>> {
    let mut s = Session::inference(&model.store);
    let f = s.constant(feats.clone());
    let out = model.decode(&mut s, f, DecodeMode::Fixed(steps), true)?;
    Ok(out.reads)
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub analytic: BTreeMap<String, AnalyticFlops>,
    pub measured: BTreeMap<String, Vec<Measured>>,
    pub encoder_flops: u64,
    /// Encoder plus decoder FLOPs per sequence length.
    pub end_to_end: BTreeMap<String, BTreeMap<usize, u64>>,
    pub dims: Dims,
    pub flop_convention: &'static str,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
