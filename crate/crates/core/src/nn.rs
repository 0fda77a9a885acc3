//! Parameterized layers shared by the rectifier, encoder and decoders.

use rand::Rng;
use spdn_tensor::{ParamId, ParamStore, Session, Tensor, Var};

use crate::error::Result;

const NORM_EPS: f64 = 1e-5;

pub fn xavier(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(shape, -a, a, rng)
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub n_in: usize,
    pub n_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, n_in: usize, n_out: usize, rng: &mut impl Rng) -> Result<Self> {
        let weight = store.add(format!("{name}.w"), xavier(&[n_out, n_in], n_in, n_out, rng))?;
        let bias = Some(store.add(format!("{name}.b"), Tensor::zeros(&[n_out]))?);
        Ok(Linear { weight, bias, n_in, n_out })
    }

    pub fn without_bias(
        store: &mut ParamStore,
        name: &str,
        n_in: usize,
        n_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.w"), xavier(&[n_out, n_in], n_in, n_out, rng))?;
        Ok(Linear { weight, bias: None, n_in, n_out })
    }

    /// Weights (and bias) start at zero; the bias may be given an explicit value.
    pub fn zeroed(store: &mut ParamStore, name: &str, n_in: usize, n_out: usize, bias: Option<Tensor>) -> Result<Self> {
        let weight = store.add(format!("{name}.w"), Tensor::zeros(&[n_out, n_in]))?;
        let bias = store.add(format!("{name}.b"), bias.unwrap_or_else(|| Tensor::zeros(&[n_out])))?;
        Ok(Linear { weight, bias: Some(bias), n_in, n_out })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let y = s.matmul(w, x)?;
        match self.bias {
            Some(b) => {
                let b = s.param(b);
                Ok(s.add(y, b)?)
            }
            None => Ok(y),
        }
    }

    /// Multiply-add count of one application (bias adds included).
    pub fn flops(&self) -> u64 {
        (2 * self.n_in * self.n_out + usize::from(self.bias.is_some()) * self.n_out) as u64
    }
}

/// Convolution followed by per-channel spatial normalization (no ReLU).
#[derive(Debug, Clone)]
pub struct ConvNorm {
    pub kernel: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvNorm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let std = (2.0 / (c_in * k * k) as f64).sqrt();
        let kernel = store.add(format!("{name}.k"), Tensor::randn(&[c_out, c_in, k, k], std, rng))?;
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[c_out], 1.0))?;
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[c_out]))?;
        Ok(ConvNorm { kernel, gamma, beta, stride, pad: k / 2 })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let k = s.param(self.kernel);
        let y = s.conv2d(x, k, self.stride, self.pad)?;
        let (g, b) = (s.param(self.gamma), s.param(self.beta));
        Ok(s.instance_norm(y, g, b, NORM_EPS)?)
    }
}

/// Convolution with a per-channel bias.
#[derive(Debug, Clone)]
pub struct Conv {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let std = (2.0 / (c_in * k * k) as f64).sqrt();
        let kernel = store.add(format!("{name}.k"), Tensor::randn(&[c_out, c_in, k, k], std, rng))?;
        let bias = store.add(format!("{name}.b"), Tensor::zeros(&[c_out]))?;
        Ok(Conv { kernel, bias, stride, pad: k / 2 })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let k = s.param(self.kernel);
        let y = s.conv2d(x, k, self.stride, self.pad)?;
        let b = s.param(self.bias);
        Ok(s.add_channel_bias(y, b)?)
    }
}

/// LSTM cell with gates ordered input, forget, candidate, output.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        let w_ih = store.add(format!("{name}.w_ih"), xavier(&[4 * hidden, input], input, hidden, rng))?;
        let w_hh = store.add(format!("{name}.w_hh"), xavier(&[4 * hidden, hidden], hidden, hidden, rng))?;
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].fill(1.0);
        let bias = store.add(format!("{name}.b"), Tensor::vector(b))?;
        Ok(Lstm { w_ih, w_hh, bias, input, hidden })
    }

    pub fn zero_state(&self, s: &mut Session) -> LstmState {
        let h = s.constant(Tensor::zeros(&[self.hidden]));
        let c = s.constant(Tensor::zeros(&[self.hidden]));
        LstmState { h, c }
    }

    pub fn step(&self, s: &mut Session, x: Var, state: LstmState) -> Result<LstmState> {
        let (w_ih, w_hh, b) = (s.param(self.w_ih), s.param(self.w_hh), s.param(self.bias));
        let gx = s.matmul(w_ih, x)?;
        let gh = s.matmul(w_hh, state.h)?;
        let g = s.add(gx, gh)?;
        let g = s.add(g, b)?;
        let d = self.hidden;
        let i = s.slice(g, 0, d)?;
        let f = s.slice(g, d, d)?;
        let cand = s.slice(g, 2 * d, d)?;
        let o = s.slice(g, 3 * d, d)?;
        let (i, f, o) = (s.sigmoid(i), s.sigmoid(f), s.sigmoid(o));
        let cand = s.tanh(cand);
        let keep = s.mul(f, state.c)?;
        let write = s.mul(i, cand)?;
        let c = s.add(keep, write)?;
        let tc = s.tanh(c);
        let h = s.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
