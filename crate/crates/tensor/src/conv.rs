//! 2-D cross-correlation via im2col.

use crate::error::{Result, TensorError};
use crate::kernels;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if input.len() != 3 || kernel.len() != 4 {
            return Err(TensorError::dim(
                "conv2d",
                format!("input {input:?} must be C×H×W and kernels {kernel:?} C_out×C_in×k×k"),
            ));
        }
        let (c_in, h, w) = (input[0], input[1], input[2]);
        let (c_out, kc, k, k2) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if kc != c_in {
            return Err(TensorError::dim(
                "conv2d",
                format!("input has {c_in} channels but kernels {kernel:?} expect {kc}"),
            ));
        }
        if k != k2 || k % 2 == 0 {
            return Err(TensorError::config("conv2d", format!("kernel must be square and odd, got {k}×{k2}")));
        }
        if stride == 0 {
            return Err(TensorError::config("conv2d", "stride must be positive"));
        }
        // Output extents follow floor((len + 2·pad − k) / stride) + 1; the
        // trailing rows/columns a strided window cannot reach are skipped.
        let extent = |len: usize| -> Result<usize> {
            let span = len + 2 * pad;
            if span < k {
                return Err(TensorError::config(
                    "conv2d",
                    format!("extent {len} with pad {pad} is smaller than kernel {k}: no output positions"),
                ));
            }
            Ok((span - k) / stride + 1)
        };
        let h_out = extent(h)?;
        let w_out = extent(w)?;
        Ok(ConvGeom { c_in, c_out, h, w, k, stride, pad, h_out, w_out })
    }

    pub fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn out_positions(&self) -> usize {
        self.h_out * self.w_out
    }
}

pub fn im2col(input: &[f64], g: &ConvGeom) -> Vec<f64> {
    let npos = g.out_positions();
    let mut cols = vec![0.0; g.col_rows() * npos];
    for ci in 0..g.c_in {
        let plane = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for kh in 0..g.k {
            for kw in 0..g.k {
                let row = (ci * g.k + kh) * g.k + kw;
                let dst = &mut cols[row * npos..(row + 1) * npos];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + kh) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let out = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kw) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *o = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_acc(cols: &[f64], g: &ConvGeom, grad_input: &mut [f64]) {
    let npos = g.out_positions();
    for ci in 0..g.c_in {
        let plane = &mut grad_input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for kh in 0..g.k {
            for kw in 0..g.k {
                let row = (ci * g.k + kh) * g.k + kw;
                let src = &cols[row * npos..(row + 1) * npos];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + kh) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + kw) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.w_out + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn forward(cols: &[f64], kernel: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.c_out * g.out_positions()];
    kernels::gemm_acc(kernel, cols, &mut out, g.c_out, g.col_rows(), g.out_positions());
    out
}

pub fn backward_kernel(cols: &[f64], grad_out: &[f64], g: &ConvGeom, grad_kernel: &mut [f64]) {
    kernels::gemm_nt_acc(grad_out, cols, grad_kernel, g.c_out, g.col_rows(), g.out_positions());
}

pub fn backward_input(kernel: &[f64], grad_out: &[f64], g: &ConvGeom, grad_input: &mut [f64]) {
    let mut dcols = vec![0.0; g.col_rows() * g.out_positions()];
    kernels::gemm_tn_acc(kernel, grad_out, &mut dcols, g.c_out, g.col_rows(), g.out_positions());
    col2im_acc(&dcols, g, grad_input);
}
