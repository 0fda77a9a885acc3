//! Bilinear sampling at normalized coordinates.
//!
//! A coordinate `x ∈ [-1, 1]` maps to the pixel column `(x + 1) / 2 · (W − 1)`
//! (and likewise for rows). Coordinates outside the square are clamped to the
//! border, where the gradient with respect to the coordinate is zero. At exact
//! grid nodes the interpolation weights take their right-hand limit, except on
//! the last row/column where the left-hand limit is used. Pixel coordinates
//! within `NODE_SNAP` of an integer are snapped onto that node, so a point
//! built from a node index samples that node's value exactly.

const NODE_SNAP: f64 = 1e-9;

/// Precomputed interpolation footprint of one sample point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub fx: f64,
    pub fy: f64,
    /// d(pixel x)/d(normalized x), zero when the coordinate was clamped.
    pub dx_scale: f64,
    pub dy_scale: f64,
}

fn axis(coord: f64, extent: usize) -> (usize, usize, f64, f64) {
    let span = (extent - 1) as f64;
    let clamped = coord.clamp(-1.0, 1.0);
    let inside = coord == clamped;
    let mut pix = (clamped + 1.0) * 0.5 * span;
    let nearest = pix.round();
    if (pix - nearest).abs() <= NODE_SNAP {
        pix = nearest;
    }
    if extent == 1 {
        return (0, 0, 0.0, 0.0);
    }
    let base = (pix.floor() as usize).min(extent - 2);
    let frac = pix - base as f64;
    let scale = if inside { 0.5 * span } else { 0.0 };
    (base, base + 1, frac, scale)
}

impl Tap {
    pub fn new(x: f64, y: f64, h: usize, w: usize) -> Self {
        let (x0, x1, fx, dx_scale) = axis(x, w);
        let (y0, y1, fy, dy_scale) = axis(y, h);
        Tap { x0, x1, y0, y1, fx, fy, dx_scale, dy_scale }
    }

    /// `(flat spatial index, weight)` of the four corners.
    #[inline]
    pub fn corners(&self, w: usize) -> [(usize, f64); 4] {
        let (gx, gy) = (1.0 - self.fx, 1.0 - self.fy);
        [
            (self.y0 * w + self.x0, gx * gy),
            (self.y0 * w + self.x1, self.fx * gy),
            (self.y1 * w + self.x0, gx * self.fy),
            (self.y1 * w + self.x1, self.fx * self.fy),
        ]
    }
}

/// `out[c·n + i]` is channel `c` sampled at point `i`.
pub fn forward(map: &[f64], c: usize, h: usize, w: usize, taps: &[Tap]) -> Vec<f64> {
    let n = taps.len();
    let plane = h * w;
    let mut out = vec![0.0; c * n];
    for (i, tap) in taps.iter().enumerate() {
        let corners = tap.corners(w);
        for ch in 0..c {
            let m = &map[ch * plane..(ch + 1) * plane];
            out[ch * n + i] = corners[0].1 * m[corners[0].0]
                + corners[1].1 * m[corners[1].0]
                + corners[2].1 * m[corners[2].0]
                + corners[3].1 * m[corners[3].0];
        }
    }
    out
}

pub fn backward_map(grad_out: &[f64], c: usize, h: usize, w: usize, taps: &[Tap], grad_map: &mut [f64]) {
    let n = taps.len();
    let plane = h * w;
    for (i, tap) in taps.iter().enumerate() {
        let corners = tap.corners(w);
        for ch in 0..c {
            let g = grad_out[ch * n + i];
            if g == 0.0 {
                continue;
            }
            let m = &mut grad_map[ch * plane..(ch + 1) * plane];
            for (idx, wt) in corners {
                m[idx] += g * wt;
            }
        }
    }
}

/// Gradient with respect to the `(x, y)` coordinates, `grad_points[2i..2i+2]`.
pub fn backward_points(
    map: &[f64],
    grad_out: &[f64],
    c: usize,
    h: usize,
    w: usize,
    taps: &[Tap],
    grad_points: &mut [f64],
) {
    let n = taps.len();
    let plane = h * w;
    for (i, tap) in taps.iter().enumerate() {
        if tap.dx_scale == 0.0 && tap.dy_scale == 0.0 {
            continue;
        }
        let (mut gx, mut gy) = (0.0, 0.0);
        for ch in 0..c {
            let g = grad_out[ch * n + i];
            let m = &map[ch * plane..(ch + 1) * plane];
            let v00 = m[tap.y0 * w + tap.x0];
            let v01 = m[tap.y0 * w + tap.x1];
            let v10 = m[tap.y1 * w + tap.x0];
            let v11 = m[tap.y1 * w + tap.x1];
            gx += g * ((v01 - v00) * (1.0 - tap.fy) + (v11 - v10) * tap.fy);
            gy += g * ((v10 - v00) * (1.0 - tap.fx) + (v11 - v01) * tap.fx);
        }
        grad_points[2 * i] += gx * tap.dx_scale;
        grad_points[2 * i + 1] += gy * tap.dy_scale;
    }
}
