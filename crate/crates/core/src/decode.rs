//! Decoding modes and per-run records shared by all decoder variants.

use spdn_tensor::{ReadLayout, Session, Tape, Var};

use crate::error::{Result, SpdnError};
use crate::nn::argmax;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderConfig {
    pub channels: usize,
    pub hidden: usize,
    pub attn_dim: usize,
    pub embed_dim: usize,
    pub pos_dim: usize,
    pub pau_hidden: [usize; 2],
    pub k: usize,
    pub t_max: usize,
    pub vocab: usize,
    pub delta_max: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            channels: 256,
            hidden: 256,
            attn_dim: 256,
            embed_dim: 64,
            pos_dim: 64,
            pau_hidden: [128, 64],
            k: 1,
            t_max: 25,
            vocab: 37,
            delta_max: 0.5,
        }
    }
}

impl DecoderConfig {
    pub fn eos(&self) -> usize {
        self.vocab - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode<'a> {
    /// Feed back the argmax; stop after EOS or `T_max` steps.
    Greedy,
    /// Feed back ground truth; runs exactly `labels.len() + 1` steps.
    TeacherForced(&'a [usize]),
    /// Feed back the argmax for exactly this many steps (benchmarking).
    Fixed(usize),
}

impl DecodeMode<'_> {
    pub fn steps(&self, t_max: usize) -> Result<usize> {
        let n = match *self {
            DecodeMode::Greedy => t_max,
            DecodeMode::TeacherForced(labels) => labels.len() + 1,
            DecodeMode::Fixed(n) => n,
        };
        if n == 0 || n > t_max {
            return Err(SpdnError::Usage(format!("{n} decode steps with T_max = {t_max}")));
        }
        Ok(n)
    }

    /// Symbol fed into step `t`; the start token is EOS.
    pub fn prev_symbol(&self, t: usize, emitted: &[usize], eos: usize) -> usize {
        match (*self, t) {
            (_, 0) => eos,
            (DecodeMode::TeacherForced(labels), t) => labels[t - 1],
            (_, t) => emitted[t - 1],
        }
    }

    pub fn stops_at(&self, symbol: usize, eos: usize) -> bool {
        matches!(self, DecodeMode::Greedy) && symbol == eos
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    /// Sample points of step `t` were produced.
    Points(usize),
    /// Step `t` was classified.
    Classify(usize),
}

#[derive(Debug, Clone, Default)]
pub struct DecodeOutput {
    pub logits: Vec<Var>,
    /// Argmax of every executed step.
    pub argmax: Vec<usize>,
    /// Attention weights per step (attention decoder only).
    pub attention: Vec<Var>,
    /// `k×2` sample points per step (single-point decoders only).
    pub points: Vec<Var>,
    /// Mean sample point per step, used by the distance loss.
    pub anchors: Vec<Var>,
    /// Distinct feature positions read per step, when tracing.
    pub reads: Vec<usize>,
    pub events: Vec<Event>,
}

impl DecodeOutput {
    /// Predicted symbols before the first EOS.
    pub fn symbols(&self, eos: usize) -> Vec<usize> {
        self.argmax.iter().copied().take_while(|&s| s != eos).collect()
    }

    /// Steps up to and including the first EOS.
    pub fn steps(&self, eos: usize) -> usize {
        self.argmax.iter().position(|&s| s == eos).map_or(self.argmax.len(), |p| p + 1)
    }

    pub(crate) fn record_logits(&mut self, s: &Session, logits: Var) -> usize {
        let best = argmax(s.value(logits).data());
        self.logits.push(logits);
        self.argmax.push(best);
        best
    }

    /// Values of the per-step points as `(x, y)` pairs.
    pub fn point_values(&self, tape: &Tape) -> Vec<Vec<[f64; 2]>> {
        self.points.iter().map(|&p| tape.value(p).data().chunks(2).map(|c| [c[0], c[1]]).collect()).collect()
    }
}

/// Starts counting reads of `feats` when `trace` is set.
pub(crate) fn watch(s: &mut Session, feats: Var, trace: bool) {
    if trace {
        let positions = s.shape(feats)[1..].iter().product();
        s.watch_reads(feats, ReadLayout::ChannelsFirst { positions });
        s.take_reads();
    }
}

pub(crate) fn take_reads(s: &mut Session, trace: bool, out: &mut DecodeOutput) {
    if trace {
        let n = s.take_reads();
        out.reads.push(n);
    }
}
