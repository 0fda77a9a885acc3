//! Single-point decoders: the serial (recurrent) and parallel strategies, the
//! position alignment unit, k-point fusion, and trajectory export.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use spdn_tensor::{ParamId, ParamStore, Session, Tape, Tensor, Var};

use crate::decode::{self, DecodeMode, DecodeOutput, DecoderConfig, Event};
use crate::error::{Result, SpdnError};
use crate::image::{GrayImage, RgbImage};
use crate::nn::{Linear, Lstm, LstmState};

/// Two tanh hidden layers and a final linear layer emitting `2k` values.
#[derive(Debug, Clone)]
pub struct PointHead {
    pub l1: Linear,
    pub l2: Linear,
    pub l3: Linear,
}

impl PointHead {
    fn new(store: &mut ParamStore, name: &str, n_in: usize, cfg: &DecoderConfig, rng: &mut impl Rng) -> Result<Self> {
        let [h1, h2] = cfg.pau_hidden;
        Ok(PointHead {
            l1: Linear::new(store, &format!("{name}.l1"), n_in, h1, rng)?,
            l2: Linear::new(store, &format!("{name}.l2"), h1, h2, rng)?,
            l3: Linear::zeroed(store, &format!("{name}.l3"), h2, 2 * cfg.k, None)?,
        })
    }

    /// `tanh(l3(tanh(l2(tanh(l1(x))))))`.
    fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let a = self.l1.forward(s, x)?;
        let a = s.tanh(a);
        let a = self.l2.forward(s, a)?;
        let a = s.tanh(a);
        let a = self.l3.forward(s, a)?;
        Ok(s.tanh(a))
    }

    pub fn flops(&self) -> u64 {
        let nl = 4 * (self.l1.n_out + self.l2.n_out + self.l3.n_out) as u64;
        self.l1.flops() + self.l2.flops() + self.l3.flops() + nl
    }
}

/// Combines the `k` sampled vectors of one step into a single `C` vector.
#[derive(Debug, Clone)]
pub struct Fuse {
    pub proj: Option<Linear>,
    pub k: usize,
    pub channels: usize,
}

impl Fuse {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, k: usize, rng: &mut impl Rng) -> Result<Self> {
        if k == 0 {
            return Err(SpdnError::Config("at least one key point per step is required".into()));
        }
        let proj = if k > 1 { Some(Linear::without_bias(store, name, k * channels, channels, rng)?) } else { None };
        Ok(Fuse { proj, k, channels })
    }

    /// `samples` is the `C×k` output of the grid sampler. Returns the fused
    /// `[C]` vector and the raw sample-major concatenation `[k·C]`.
    pub fn forward(&self, s: &mut Session, samples: Var) -> Result<(Var, Var)> {
        let raw = if self.k == 1 {
            s.reshape(samples, &[self.channels])?
        } else {
            let t = s.transpose(samples)?;
            s.reshape(t, &[self.k * self.channels])?
        };
        let fused = match &self.proj {
            Some(p) => p.forward(s, raw)?,
            None => raw,
        };
        Ok((fused, raw))
    }

    pub fn flops(&self) -> u64 {
        self.proj.as_ref().map_or(0, Linear::flops)
    }
}

// Negated comparisons also reject NaN.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn check_k(cfg: &DecoderConfig) -> Result<()> {
    if cfg.k == 0 {
        return Err(SpdnError::Config("k must be at least 1".into()));
    }
    if !(cfg.delta_max > 0.0) {
        return Err(SpdnError::Config("delta_max must be positive".into()));
    }
    Ok(())
}

fn mean_point(s: &mut Session, points: Var, k: usize) -> Result<Var> {
    if k == 1 {
        return Ok(s.reshape(points, &[2])?);
    }
    let w = s.constant(Tensor::full(&[k], 1.0 / k as f64));
    Ok(s.matmul(w, points)?)
}

/// Serial strategy: each step's points are offsets from the previous step's anchor.
#[derive(Debug, Clone)]
pub struct SerialDecoder {
    cfg: DecoderConfig,
    pub p0: ParamId,
    pub pe: ParamId,
    pub pau: PointHead,
    pub fuse: Fuse,
    pub emb: ParamId,
    pub lstm: Lstm,
    pub cls: Linear,
}

impl SerialDecoder {
    pub fn new(store: &mut ParamStore, cfg: DecoderConfig, rng: &mut impl Rng) -> Result<Self> {
        check_k(&cfg)?;
        let c = cfg.channels;
        Ok(SerialDecoder {
            p0: store.add("sp.p0", Tensor::vector(vec![-0.9, 0.0]))?,
            pe: store.add("sp.pe", Tensor::randn(&[cfg.t_max, cfg.pos_dim], 0.1, rng))?,
            pau: PointHead::new(store, "sp.pau", cfg.k * c + cfg.pos_dim, &cfg, rng)?,
            fuse: Fuse::new(store, "sp.fuse", c, cfg.k, rng)?,
            emb: store.add("sp.emb", Tensor::randn(&[cfg.vocab, cfg.embed_dim], 0.1, rng))?,
            lstm: Lstm::new(store, "sp.lstm", c + cfg.embed_dim, cfg.hidden, rng)?,
            cls: Linear::new(store, "sp.cls", cfg.hidden, cfg.vocab, rng)?,
            cfg,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    /// `δ_max · tanh(MLP(concat(prev_feature, pe[step])))`, shaped `k×2`.
    pub fn pau_offset(&self, s: &mut Session, prev_feature: Var, step: usize) -> Result<Var> {
        if step >= self.cfg.t_max {
            return Err(SpdnError::Range { step, t_max: self.cfg.t_max });
        }
        let pe = s.param(self.pe);
        let row = s.embedding(pe, step)?;
        let x = s.concat(&[prev_feature, row], 0)?;
        let raw = self.pau.forward(s, x)?;
        let off = s.scale(raw, self.cfg.delta_max);
        Ok(s.reshape(off, &[self.cfg.k, 2])?)
    }

    pub fn decode(&self, s: &mut Session, feats: Var, mode: DecodeMode, trace: bool) -> Result<DecodeOutput> {
        let n = mode.steps(self.cfg.t_max)?;
        let (eos, k, c) = (self.cfg.eos(), self.cfg.k, self.cfg.channels);
        if s.shape(feats).first() != Some(&c) {
            return Err(SpdnError::Config(format!("features {:?}, decoder expects {c} channels", s.shape(feats))));
        }
        decode::watch(s, feats, trace);
        let mut out = DecodeOutput::default();
        let mut state = self.lstm.zero_state(s);
        let mut anchor = s.param(self.p0);
        let mut prev_feature = s.constant(Tensor::zeros(&[k * c]));
        for t in 0..n {
            let off = self.pau_offset(s, prev_feature, t)?;
            let moved = s.add_broadcast(off, anchor)?;
            let points = s.clamp(moved, -1.0, 1.0);
            out.events.push(Event::Points(t));
            let samples = s.grid_sample(feats, points)?;
            decode::take_reads(s, trace, &mut out);
            let (fused, raw) = self.fuse.forward(s, samples)?;
            let prev = mode.prev_symbol(t, &out.argmax, eos);
            let (logits, next) = self.lstm_step(s, state, fused, prev)?;
            state = next;
            anchor = mean_point(s, points, k)?;
            out.points.push(points);
            out.anchors.push(anchor);
            out.events.push(Event::Classify(t));
            prev_feature = raw;
            let best = out.record_logits(s, logits);
            if mode.stops_at(best, eos) {
                break;
            }
        }
        Ok(out)
    }

    /// LSTM on `concat(feature, emb(prev))`, then the output classifier.
    pub fn lstm_step(&self, s: &mut Session, state: LstmState, feature: Var, prev: usize) -> Result<(Var, LstmState)> {
        let table = s.param(self.emb);
        let e = s.embedding(table, prev)?;
        let x = s.concat(&[feature, e], 0)?;
        let next = self.lstm.step(s, x, state)?;
        let logits = self.cls.forward(s, next.h)?;
        Ok((logits, next))
    }
}

/// Parallel strategy: every step's points come from pooled features and the
/// step's position embedding, all before any classification.
#[derive(Debug, Clone)]
pub struct ParallelDecoder {
    cfg: DecoderConfig,
    pub pe: ParamId,
    pub head: PointHead,
    pub fuse: Fuse,
    pub cls: Linear,
}

impl ParallelDecoder {
    pub fn new(store: &mut ParamStore, cfg: DecoderConfig, rng: &mut impl Rng) -> Result<Self> {
        check_k(&cfg)?;
        let c = cfg.channels;
        Ok(ParallelDecoder {
            pe: store.add("par.pe", Tensor::randn(&[cfg.t_max, cfg.pos_dim], 0.1, rng))?,
            head: PointHead::new(store, "par.head", c + cfg.pos_dim, &cfg, rng)?,
            fuse: Fuse::new(store, "par.fuse", c, cfg.k, rng)?,
            cls: Linear::new(store, "par.cls", c, cfg.vocab, rng)?,
            cfg,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    /// `k×2` absolute points for step `t` given the pooled feature.
    pub fn points(&self, s: &mut Session, pooled: Var, t: usize) -> Result<Var> {
        if t >= self.cfg.t_max {
            return Err(SpdnError::Range { step: t, t_max: self.cfg.t_max });
        }
        let pe = s.param(self.pe);
        let row = s.embedding(pe, t)?;
        let x = s.concat(&[pooled, row], 0)?;
        let p = self.head.forward(s, x)?;
        Ok(s.reshape(p, &[self.cfg.k, 2])?)
    }

    /// Classification of the fused sample at `points`.
    pub fn classify(&self, s: &mut Session, feats: Var, points: Var) -> Result<Var> {
        let samples = s.grid_sample(feats, points)?;
        let (fused, _) = self.fuse.forward(s, samples)?;
        self.cls.forward(s, fused)
    }

    pub fn decode(&self, s: &mut Session, feats: Var, mode: DecodeMode, trace: bool) -> Result<DecodeOutput> {
        let n = mode.steps(self.cfg.t_max)?;
        let t_max = self.cfg.t_max;
        decode::watch(s, feats, trace);
        let pooled = s.spatial_mean(feats)?;
        let mut out = DecodeOutput::default();
        let mut all = Vec::with_capacity(t_max);
        for t in 0..t_max {
            all.push(self.points(s, pooled, t)?);
            out.events.push(Event::Points(t));
        }
        if trace {
            s.take_reads();
        }
        for (t, &points) in all.iter().enumerate().take(n) {
            let logits = self.classify(s, feats, points)?;
            decode::take_reads(s, trace, &mut out);
            out.points.push(points);
            let anchor = mean_point(s, points, self.cfg.k)?;
            out.anchors.push(anchor);
            out.events.push(Event::Classify(t));
            out.record_logits(s, logits);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub t: usize,
    pub points: Vec<Point>,
    pub symbol: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleTrajectory {
    pub steps: Vec<TrajectoryStep>,
}

impl SampleTrajectory {
    /// Executed steps of a single-point decode, up to and including the first EOS.
    pub fn from_output(tape: &Tape, out: &DecodeOutput, eos: usize) -> Self {
        let steps = out
            .point_values(tape)
            .into_iter()
            .zip(&out.argmax)
            .take(out.steps(eos))
            .enumerate()
            .map(|(t, (pts, &symbol))| TrajectoryStep {
                t,
                points: pts.into_iter().map(|[x, y]| Point { x, y }).collect(),
                symbol,
            })
            .collect();
        SampleTrajectory { steps }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trajectory serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SpdnError::Dataset(format!("trajectory JSON: {e}")))
    }
}

/// Pixel of a normalized coordinate under the sampler's convention.
pub fn to_pixel(p: Point, h: usize, w: usize) -> (usize, usize) {
    let px = (p.x.clamp(-1.0, 1.0) + 1.0) / 2.0 * (w - 1) as f64;
    let py = (p.y.clamp(-1.0, 1.0) + 1.0) / 2.0 * (h - 1) as f64;
    (py.round() as usize, px.round() as usize)
}

const PALETTE: [[u8; 3]; 6] = [[255, 0, 0], [0, 200, 0], [0, 80, 255], [255, 160, 0], [200, 0, 200], [0, 200, 200]];

pub fn overlay(traj: &SampleTrajectory, image: &GrayImage) -> RgbImage {
    let mut out = RgbImage::from_gray(image);
    for step in &traj.steps {
        let color = PALETTE[step.t % PALETTE.len()];
        for &p in &step.points {
            let (y, x) = to_pixel(p, image.height, image.width);
            let (y, x) = (y as isize, x as isize);
            for (dy, dx) in [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)] {
                out.put(y + dy, x + dx, color);
            }
        }
    }
    out
}

/// Writes `<stem>.json` and `<stem>.ppm` into `dir`; returns both paths.
pub fn export_trajectory(traj: &SampleTrajectory, image: &GrayImage, dir: &Path, stem: &str) -> Result<[PathBuf; 2]> {
    if traj.steps.is_empty() {
        return Err(SpdnError::Usage("cannot export an empty trajectory".into()));
    }
    fs::create_dir_all(dir).map_err(SpdnError::io(dir))?;
    let json = dir.join(format!("{stem}.json"));
    fs::write(&json, traj.to_json()).map_err(SpdnError::io(&json))?;
    let ppm = dir.join(format!("{stem}.ppm"));
    fs::write(&ppm, overlay(traj, image).encode_ppm()).map_err(SpdnError::io(&ppm))?;
    Ok([json, ppm])
}
