//! Forward rules. Each method computes its value eagerly and records the op.

use std::sync::Arc;

use crate::conv::{self, ConvGeom};
use crate::error::{Result, TensorError};
use crate::kernels;
use crate::linalg::LuFactors;
use crate::sample::{self, Tap};
use crate::tape::{Op, ReadLayout, Tape, Var};
use crate::tensor::Tensor;

impl Tape {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::dim(op, format!("shapes {:?} and {:?} differ", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect()).expect("shape preserved");
        let rg = self.requires_grad(a);
        self.push(out, op, rg)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, op, rg))
    }

    /// Matrix product. A rank-1 left operand acts as a single row and a rank-1
    /// right operand as a single column; the corresponding output axis is dropped.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (m, k, a_vec) = match sa.as_slice() {
            [k] => (1, *k, true),
            [m, k] => (*m, *k, false),
            _ => return Err(TensorError::dim("matmul", format!("left operand {sa:?} is not a matrix or vector"))),
        };
        let (k2, n, b_vec) = match sb.as_slice() {
            [k] => (*k, 1, true),
            [k, n] => (*k, *n, false),
            _ => return Err(TensorError::dim("matmul", format!("right operand {sb:?} is not a matrix or vector"))),
        };
        if k != k2 {
            return Err(TensorError::dim("matmul", format!("inner dimensions differ: {sa:?} · {sb:?}")));
        }
        self.trace_all(a);
        self.trace_all(b);
        let mut out = vec![0.0; m * n];
        kernels::gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let shape = match (a_vec, b_vec) {
            (true, true) => vec![],
            (true, false) => vec![n],
            (false, true) => vec![m],
            (false, false) => vec![m, n],
        };
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b, m, k, n }, rg))
    }

    /// Zero-padded cross-correlation of a `C_in×H×W` input with `C_out×C_in×k×k` kernels.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(input), self.shape(kernel), stride, pad)?;
        let cols = conv::im2col(self.value(input).data(), &geom);
        let out = conv::forward(&cols, self.value(kernel).data(), &geom);
        let rg = self.any_grad(&[input, kernel]);
        let t = Tensor::new(vec![geom.c_out, geom.h_out, geom.w_out], out)?;
        Ok(self.push(t, Op::Conv2d { input, kernel, geom, cols }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| s * x, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    /// Elementwise clamp; the gradient passes only where the input lies in `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp { a, lo, hi })
    }

    /// Softmax over all entries of `a`, computed after subtracting the maximum.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(TensorError::dim("softmax", "empty input"));
        }
        let probs = softmax_values(t.data());
        let out = Tensor::new(t.shape().to_vec(), probs)?;
        let rg = self.requires_grad(a);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    /// `-log softmax(logits)[target]` as a scalar.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let t = self.value(logits);
        if target >= t.len() {
            return Err(TensorError::Lookup { index: target, rows: t.len() });
        }
        let x = t.data();
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - x[target];
        let probs = x.iter().map(|v| (v - lse).exp()).collect();
        let rg = self.requires_grad(logits);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, target, probs }, rg))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::dim("concat", "no inputs"));
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::dim("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let outer: usize = base[..axis].iter().product();
        let trailing: usize = base[axis + 1..].iter().product();
        let mut inners = Vec::with_capacity(parts.len());
        let mut extent = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len() || s[..axis] != base[..axis] || s[axis + 1..] != base[axis + 1..] {
                return Err(TensorError::dim(
                    "concat",
                    format!("shape {s:?} does not match {base:?} outside axis {axis}"),
                ));
            }
            extent += s[axis];
            inners.push(s[axis] * trailing);
        }
        let total: usize = inners.iter().sum();
        let mut data = vec![0.0; outer * total];
        let mut offset = 0;
        for (&p, &inner) in parts.iter().zip(&inners) {
            let src = self.value(p).data();
            for o in 0..outer {
                data[o * total + offset..o * total + offset + inner].copy_from_slice(&src[o * inner..(o + 1) * inner]);
            }
            offset += inner;
        }
        let mut shape = base;
        shape[axis] = extent;
        let rg = self.any_grad(parts);
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat { parts: parts.to_vec(), outer, inners }, rg))
    }

    /// Row `index` of a `V×d` table.
    pub fn embedding(&mut self, table: Var, index: usize) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(TensorError::dim("embedding", format!("table {s:?} is not V×d")));
        }
        let (rows, dim) = (s[0], s[1]);
        if index >= rows {
            return Err(TensorError::Lookup { index, rows });
        }
        let row = self.value(table).data()[index * dim..(index + 1) * dim].to_vec();
        let rg = self.requires_grad(table);
        Ok(self.push(Tensor::vector(row), Op::Embedding { table, index, dim }, rg))
    }

    /// Bilinear samples of a `C×H×W` map at `N×2` normalized `(x, y)` points,
    /// returned as `C×N`.
    pub fn grid_sample(&mut self, map: Var, points: Var) -> Result<Var> {
        let ms = self.shape(map).to_vec();
        let ps = self.shape(points).to_vec();
        let [c, h, w] = ms[..] else {
            return Err(TensorError::dim("grid_sample", format!("map {ms:?} is not C×H×W")));
        };
        let n = match ps[..] {
            [n, 2] => n,
            [2] => 1,
            _ => return Err(TensorError::dim("grid_sample", format!("points {ps:?} are not N×2"))),
        };
        let taps: Vec<Tap> = self.value(points).data().chunks(2).map(|p| Tap::new(p[0], p[1], h, w)).collect();
        let cells: Vec<usize> = taps.iter().flat_map(|t| t.corners(w).map(|(i, _)| i)).collect();
        self.trace_cells(map, cells);
        let out = sample::forward(self.value(map).data(), c, h, w, &taps);
        let rg = self.any_grad(&[map, points]);
        Ok(self.push(Tensor::new(vec![c, n], out)?, Op::GridSample { map, points, taps, c, h, w }, rg))
    }

    /// Bilinear sample of a `C×H×W` map at one normalized point (shape `[2]`), returned as `[C]`.
    pub fn bilinear_sample(&mut self, map: Var, point: Var) -> Result<Var> {
        let out = self.grid_sample(map, point)?;
        let c = self.shape(out)[0];
        self.reshape(out, &[c])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.requires_grad(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.requires_grad(a);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.requires_grad(a);
        let v = self.push(t, Op::Reshape(a), rg);
        self.trace_view(a, v, |l| l);
        Ok(v)
    }

    /// Transpose of a 2-D value. Reads every position of a watched input.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let [rows, cols] = s[..] else {
            return Err(TensorError::dim("transpose", format!("{s:?} is not a matrix")));
        };
        self.trace_all(a);
        let src = self.value(a).data();
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = src[r * cols + c];
            }
        }
        let rg = self.requires_grad(a);
        let v = self.push(Tensor::new(vec![cols, rows], data)?, Op::Transpose { a, rows, cols }, rg);
        self.trace_view(a, v, |l| match l {
            ReadLayout::ChannelsFirst { positions } => ReadLayout::PositionsFirst { positions },
            ReadLayout::PositionsFirst { positions } => ReadLayout::ChannelsFirst { positions },
        });
        Ok(v)
    }

    /// Contiguous range `[start, start + len)` of the flattened value, as a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if start + len > t.len() {
            return Err(TensorError::dim(
                "slice",
                format!("range {}..{} exceeds length {}", start, start + len, t.len()),
            ));
        }
        let data = t.data()[start..start + len].to_vec();
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::vector(data), Op::Slice { a, start }, rg))
    }

    /// `a + bias` where `bias` matches the trailing extents of `a` and is
    /// repeated over the leading ones.
    pub fn add_broadcast(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(bias).to_vec());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != sb[..] {
            return Err(TensorError::dim("add_broadcast", format!("{sb:?} is not a suffix of {sa:?}")));
        }
        let b = self.value(bias).data();
        let n = b.len().max(1);
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            kernels::add_into(b, row);
        }
        let rg = self.any_grad(&[a, bias]);
        Ok(self.push(Tensor::new(sa, data)?, Op::AddBroadcast { a, bias }, rg))
    }

    /// Per-channel bias for a `C×…` value.
    pub fn add_channel_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let c = self.value(bias).len();
        if sa.first() != Some(&c) || self.shape(bias).len() != 1 {
            return Err(TensorError::dim("add_channel_bias", format!("bias of {c} channels for {sa:?}")));
        }
        let spatial = self.value(a).len() / c.max(1);
        let b = self.value(bias).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for (ch, row) in data.chunks_mut(spatial.max(1)).enumerate() {
            for x in row {
                *x += b[ch];
            }
        }
        let rg = self.any_grad(&[a, bias]);
        Ok(self.push(Tensor::new(sa, data)?, Op::ChannelBias { a, bias, spatial }, rg))
    }

    /// Normalizes each channel of a `C×…` value over its spatial positions,
    /// then applies the per-channel affine `gamma · x̂ + beta`.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let c = *sx.first().ok_or_else(|| TensorError::dim("instance_norm", "scalar input"))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(TensorError::dim(
                "instance_norm",
                format!("affine {:?}/{:?} for {sx:?}", self.shape(gamma), self.shape(beta)),
            ));
        }
        let spatial = self.value(x).len() / c;
        let src = self.value(x).data();
        let (gam, bet) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; c];
        let mut out = vec![0.0; src.len()];
        for ch in 0..c {
            let row = &src[ch * spatial..(ch + 1) * spatial];
            let mean = row.iter().sum::<f64>() / spatial as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / spatial as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[ch] = inv;
            for j in 0..spatial {
                let xh = (row[j] - mean) * inv;
                xhat[ch * spatial + j] = xh;
                out[ch * spatial + j] = gam[ch] * xh + bet[ch];
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(Tensor::new(sx, out)?, Op::InstanceNorm { x, gamma, beta, xhat, inv_std, spatial }, rg))
    }

    /// Solves `A X = B` for a fixed, pre-factored `A`; `B` is `n` or `n×m`.
    /// The gradient with respect to `B` is `A⁻ᵀ G`.
    pub fn solve(&mut self, lu: &Arc<LuFactors>, rhs: Var) -> Result<Var> {
        let s = self.shape(rhs).to_vec();
        let (n, cols) = match s[..] {
            [n] => (n, 1),
            [n, m] => (n, m),
            _ => return Err(TensorError::dim("solve", format!("right-hand side {s:?}"))),
        };
        if n != lu.size() {
            return Err(TensorError::dim("solve", format!("system of size {} with rhs {s:?}", lu.size())));
        }
        let x = lu.solve(self.value(rhs).data(), cols);
        let rg = self.requires_grad(rhs);
        Ok(self.push(Tensor::new(s, x)?, Op::Solve { rhs, lu: Arc::clone(lu), cols }, rg))
    }

    /// Mean over the spatial positions of each channel: `C×…` → `C`.
    pub fn spatial_mean(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let c = *s.first().ok_or_else(|| TensorError::dim("spatial_mean", "scalar input"))?;
        let spatial = self.value(a).len() / c.max(1);
        self.trace_all(a);
        let data =
            self.value(a).data().chunks(spatial.max(1)).map(|row| row.iter().sum::<f64>() / spatial as f64).collect();
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::vector(data), Op::SpatialMean { a, spatial }, rg))
    }

    /// `W x + b` for a `n_out×n_in` weight and vector input.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = self.matmul(weight, x)?;
        self.add(y, bias)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax of a slice.
pub fn softmax_values(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}
