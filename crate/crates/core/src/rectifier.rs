//! Spatial-transformer rectification with a thin-plate-spline warp.

use std::sync::Arc;

use rand::Rng;
use spdn_tensor::{LuFactors, ParamStore, Session, Tape, Tensor, Var};

use crate::error::{Result, SpdnError};
use crate::nn::{Conv, Linear};

/// Inset of the fixed target points from the canvas border (normalized units).
pub const TARGET_MARGIN: f64 = 0.05;
pub const LOC_HEIGHT: usize = 32;
pub const LOC_WIDTH: usize = 64;
const LOC_WIDTHS: [usize; 3] = [8, 16, 32];
const LOC_HIDDEN: usize = 64;

/// `K/2` equally spaced points along the top edge followed by `K/2` along the bottom.
pub fn target_layout(k: usize) -> Result<Vec<[f64; 2]>> {
    if k < 6 || !k.is_multiple_of(2) {
        return Err(SpdnError::Config(format!("control point count {k} must be even and at least 6")));
    }
    let half = k / 2;
    let lo = -1.0 + TARGET_MARGIN;
    let step = 2.0 * (1.0 - TARGET_MARGIN) / (half - 1) as f64;
    let xs: Vec<f64> = (0..half).map(|i| lo + step * i as f64).collect();
    Ok(xs.iter().map(|&x| [x, lo]).chain(xs.iter().map(|&x| [x, -lo])).collect())
}

/// `U(r) = r² log r²`, taking the squared distance.
pub fn tps_kernel(r2: f64) -> f64 {
    if r2 == 0.0 {
        0.0
    } else {
        r2 * r2.ln()
    }
}

/// Row `[U(|p−t₁|), …, U(|p−t_K|), 1, x, y]`.
pub fn basis_row(p: [f64; 2], targets: &[[f64; 2]]) -> Vec<f64> {
    let mut row: Vec<f64> = targets.iter().map(|t| tps_kernel((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2))).collect();
    row.extend([1.0, p[0], p[1]]);
    row
}

/// The `(K+3)×(K+3)` system `[[K, P], [Pᵀ, 0]]`.
pub fn tps_matrix(targets: &[[f64; 2]]) -> Vec<f64> {
    let k = targets.len();
    let n = k + 3;
    let mut m = vec![0.0; n * n];
    for (i, &t) in targets.iter().enumerate() {
        let row = basis_row(t, targets);
        m[i * n..(i + 1) * n].copy_from_slice(&row);
        for j in 0..3 {
            m[(k + j) * n + i] = row[k + j];
        }
    }
    m
}

/// Normalized coordinates of every pixel of an `h×w` grid, row-major.
pub fn pixel_grid(h: usize, w: usize) -> Vec<[f64; 2]> {
    let coord = |i: usize, n: usize| if n == 1 { 0.0 } else { 2.0 * i as f64 / (n - 1) as f64 - 1.0 };
    (0..h).flat_map(|i| (0..w).map(move |j| [coord(j, w), coord(i, h)])).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlPoints {
    pub source: Vec<[f64; 2]>,
    pub target: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TpsTransform {
    /// Rows map `(1, x, y)` to the output x and y.
    pub affine: [[f64; 3]; 2],
    pub kernel: Vec<[f64; 2]>,
    pub targets: Vec<[f64; 2]>,
}

impl TpsTransform {
    fn from_coeffs(coeffs: &[f64], targets: &[[f64; 2]]) -> Self {
        let k = targets.len();
        let kernel = (0..k).map(|i| [coeffs[2 * i], coeffs[2 * i + 1]]).collect();
        let a = |j: usize, d: usize| coeffs[2 * (k + j) + d];
        TpsTransform {
            affine: [[a(0, 0), a(1, 0), a(2, 0)], [a(0, 1), a(1, 1), a(2, 1)]],
            kernel,
            targets: targets.to_vec(),
        }
    }

    /// Maps a rectified-canvas point to its input-image point.
    pub fn map(&self, p: [f64; 2]) -> [f64; 2] {
        let row = basis_row(p, &self.targets);
        let k = self.targets.len();
        let mut out = [0.0; 2];
        for (d, o) in out.iter_mut().enumerate() {
            *o = self.kernel.iter().zip(&row).map(|(w, u)| w[d] * u).sum::<f64>()
                + self.affine[d][0] * row[k]
                + self.affine[d][1] * row[k + 1]
                + self.affine[d][2] * row[k + 2];
        }
        out
    }
}

pub fn solve_tps(points: &ControlPoints) -> Result<TpsTransform> {
    let k = points.target.len();
    if points.source.len() != k {
        return Err(SpdnError::Config(format!("{} source points for {k} targets", points.source.len())));
    }
    let lu = LuFactors::factor(&tps_matrix(&points.target), k + 3)
        .map_err(|e| SpdnError::Numerical(format!("TPS system: {e}")))?;
    let mut rhs = vec![0.0; 2 * (k + 3)];
    for (i, p) in points.source.iter().enumerate() {
        rhs[2 * i..2 * i + 2].copy_from_slice(p);
    }
    Ok(TpsTransform::from_coeffs(&lu.solve(&rhs, 2), &points.target))
}

/// Resamples `image` (`1×H₀×W₀`) through `transform` onto an `h×w` canvas.
pub fn rectify(image: &Tensor, transform: &TpsTransform, h: usize, w: usize) -> Result<Tensor> {
    let pts: Vec<f64> = pixel_grid(h, w).into_iter().flat_map(|p| transform.map(p)).collect();
    let mut tape = Tape::new();
    let img = tape.constant(image.clone());
    let grid = tape.constant(Tensor::new(vec![h * w, 2], pts)?);
    let out = tape.grid_sample(img, grid)?;
    Ok(tape.value(out).clone().reshape(&[1, h, w])?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RectifierConfig {
    pub control_points: usize,
    pub out_height: usize,
    pub out_width: usize,
}

#[derive(Debug, Clone)]
pub struct Rectifier {
    cfg: RectifierConfig,
    convs: Vec<Conv>,
    fc1: Linear,
    fc2: Linear,
    targets: Vec<[f64; 2]>,
    lu: Arc<LuFactors>,
    basis: Tensor,
    down_grid: Tensor,
}

impl Rectifier {
    pub fn new(store: &mut ParamStore, cfg: RectifierConfig, rng: &mut impl Rng) -> Result<Self> {
        let targets = target_layout(cfg.control_points)?;
        let k = targets.len();
        let lu = LuFactors::factor(&tps_matrix(&targets), k + 3)
            .map_err(|e| SpdnError::Numerical(format!("TPS system: {e}")))?;
        let mut convs = Vec::new();
        let mut c_in = 1;
        for (i, &c_out) in LOC_WIDTHS.iter().enumerate() {
            convs.push(Conv::new(store, &format!("rect.conv{}", i + 1), c_in, c_out, 3, 2, rng)?);
            c_in = c_out;
        }
        let flat = c_in * (LOC_HEIGHT / 8) * (LOC_WIDTH / 8);
        let fc1 = Linear::new(store, "rect.fc1", flat, LOC_HIDDEN, rng)?;
        let init: Vec<f64> = targets.iter().flatten().map(|v| v.atanh()).collect();
        let fc2 = Linear::zeroed(store, "rect.fc2", LOC_HIDDEN, 2 * k, Some(Tensor::vector(init)))?;
        let grid = pixel_grid(cfg.out_height, cfg.out_width);
        let basis: Vec<f64> = grid.iter().flat_map(|&p| basis_row(p, &targets)).collect();
        let down: Vec<f64> = pixel_grid(LOC_HEIGHT, LOC_WIDTH).into_iter().flatten().collect();
        Ok(Rectifier {
            cfg,
            convs,
            fc1,
            fc2,
            lu: Arc::new(lu),
            basis: Tensor::new(vec![grid.len(), k + 3], basis)?,
            down_grid: Tensor::new(vec![LOC_HEIGHT * LOC_WIDTH, 2], down)?,
            targets,
        })
    }

    pub fn config(&self) -> &RectifierConfig {
        &self.cfg
    }

    pub fn targets(&self) -> &[[f64; 2]] {
        &self.targets
    }

    /// Predicted source points, `K×2`, each coordinate in `[−1, 1]`.
    pub fn localize(&self, s: &mut Session, image: Var) -> Result<Var> {
        let grid = s.constant(self.down_grid.clone());
        let small = s.grid_sample(image, grid)?;
        let mut x = s.reshape(small, &[1, LOC_HEIGHT, LOC_WIDTH])?;
        for conv in &self.convs {
            let y = conv.forward(s, x)?;
            x = s.relu(y);
        }
        let n = s.value(x).len();
        let flat = s.reshape(x, &[n])?;
        let hidden = self.fc1.forward(s, flat)?;
        let hidden = s.relu(hidden);
        let raw = self.fc2.forward(s, hidden)?;
        let pts = s.tanh(raw);
        Ok(s.reshape(pts, &[self.targets.len(), 2])?)
    }

    /// Warps `image` by the TPS taking the targets onto `source`.
    pub fn rectify(&self, s: &mut Session, image: Var, source: Var) -> Result<Var> {
        let pad = s.constant(Tensor::zeros(&[3, 2]));
        let rhs = s.concat(&[source, pad], 0)?;
        let coeffs = s.solve(&self.lu, rhs)?;
        let basis = s.constant(self.basis.clone());
        let grid = s.matmul(basis, coeffs)?;
        let out = s.grid_sample(image, grid)?;
        Ok(s.reshape(out, &[1, self.cfg.out_height, self.cfg.out_width])?)
    }

    pub fn forward(&self, s: &mut Session, image: Var) -> Result<Var> {
        let source = self.localize(s, image)?;
        self.rectify(s, image, source)
    }

    pub fn control_points(&self, store: &ParamStore, image: &Tensor) -> Result<ControlPoints> {
        let mut s = Session::inference(store);
        let img = s.constant(image.clone());
        let pts = self.localize(&mut s, img)?;
        let source = s.value(pts).data().chunks(2).map(|c| [c[0], c[1]]).collect();
        Ok(ControlPoints { source, target: self.targets.clone() })
    }
}
