use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use spdn_tensor::LuFactors;

use crate::error::{Result, SpdnError};
use crate::image::GrayImage;
use crate::synth::font::{ADVANCE, GLYPH_H, GLYPH_W};
use crate::synth::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Distortion {
    None,
    Perspective,
    Curved,
}

impl Distortion {
    pub const ALL: [Distortion; 3] = [Distortion::None, Distortion::Perspective, Distortion::Curved];

    pub fn name(self) -> &'static str {
        match self {
            Distortion::None => "none",
            Distortion::Perspective => "perspective",
            Distortion::Curved => "curved",
        }
    }
}

impl fmt::Display for Distortion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Distortion {
    type Err = SpdnError;

    fn from_str(s: &str) -> Result<Self> {
        Distortion::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| SpdnError::Dataset(format!("unknown distortion {s:?}")))
    }
}

pub const MAX_CORNER_SHIFT: f64 = 0.15;
pub const MAX_SAGITTA: f64 = 0.25;
pub const MAX_NOISE: f64 = 0.05;
const SUPERSAMPLE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub height: usize,
    pub width: usize,
    /// Standard deviation of the additive pixel noise.
    pub noise: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig { height: 32, width: 128, noise: MAX_NOISE }
    }
}

/// Placement of the undistorted text block, in canvas pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    pub origin_x: f64,
    pub origin_y: f64,
    /// Pixels per font unit.
    pub scale: f64,
    pub background: f64,
    pub ink: f64,
}

impl Layout {
    pub fn text_width(&self, len: usize) -> f64 {
        ((ADVANCE * len - 1) as f64) * self.scale
    }

    /// Center of glyph `i` before any warp.
    pub fn glyph_center(&self, i: usize) -> [f64; 2] {
        [
            self.origin_x + ((ADVANCE * i) as f64 + GLYPH_W as f64 / 2.0) * self.scale,
            self.origin_y + GLYPH_H as f64 / 2.0 * self.scale,
        ]
    }
}

/// Geometric distortion between the undistorted text plane and the canvas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Warp {
    Identity,
    /// Row-major 3×3 homographies: text plane → canvas and back.
    Homography {
        forward: [f64; 9],
        inverse: [f64; 9],
    },
    /// Vertical displacement following a circular arc over the text span.
    Arc {
        center_x: f64,
        half_chord: f64,
        radius: f64,
        sagitta: f64,
        lift: f64,
    },
}

impl Warp {
    /// Text-plane point → canvas point.
    pub fn forward(&self, x: f64, y: f64) -> [f64; 2] {
        match *self {
            Warp::Identity => [x, y],
            Warp::Homography { forward, .. } => apply_homography(&forward, x, y),
            Warp::Arc { .. } => [x, y + self.arc_shift(x)],
        }
    }

    /// Canvas point → text-plane point.
    pub fn inverse(&self, x: f64, y: f64) -> [f64; 2] {
        match *self {
            Warp::Identity => [x, y],
            Warp::Homography { inverse, .. } => apply_homography(&inverse, x, y),
            Warp::Arc { .. } => [x, y - self.arc_shift(x)],
        }
    }

    /// Net vertical displacement of an arc warp at column `x`.
    fn arc_shift(&self, x: f64) -> f64 {
        let Warp::Arc { center_x, half_chord, radius, sagitta, lift } = *self else {
            return 0.0;
        };
        let dx = (x - center_x).clamp(-half_chord, half_chord);
        let rise = (radius * radius - dx * dx).max(0.0).sqrt() - (radius - sagitta.abs());
        sagitta.signum() * rise - lift
    }
}

fn apply_homography(h: &[f64; 9], x: f64, y: f64) -> [f64; 2] {
    let w = h[6] * x + h[7] * y + h[8];
    [(h[0] * x + h[1] * y + h[2]) / w, (h[3] * x + h[4] * y + h[5]) / w]
}

/// Homography mapping each `from[i]` onto `to[i]`.
pub fn homography(from: &[[f64; 2]; 4], to: &[[f64; 2]; 4]) -> Result<[f64; 9]> {
    let mut a = vec![0.0; 64];
    let mut b = vec![0.0; 8];
    for (i, (p, q)) in from.iter().zip(to).enumerate() {
        let ([x, y], [u, v]) = (*p, *q);
        a[(2 * i) * 8..(2 * i + 1) * 8].copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        a[(2 * i + 1) * 8..(2 * i + 2) * 8].copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        b[2 * i] = u;
        b[2 * i + 1] = v;
    }
    let h = LuFactors::factor(&a, 8)?.solve(&b, 1);
    Ok([h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0])
}

/// One generated image with its label and generator ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TextSample {
    pub image: GrayImage,
    pub text: String,
    pub label: Vec<usize>,
    pub distortion: Distortion,
    /// Per-character centers in canvas pixels (diagnostics only).
    pub char_boxes: Vec<[f64; 2]>,
    pub layout: Layout,
    pub warp: Warp,
}

#[derive(Debug, Clone)]
pub struct Renderer {
    vocab: Vocabulary,
    cfg: RenderConfig,
}

impl Renderer {
    pub fn new(vocab: Vocabulary, cfg: RenderConfig) -> Result<Self> {
        if cfg.height < GLYPH_H || cfg.width < ADVANCE {
            return Err(SpdnError::Config(format!("canvas {}×{} is too small", cfg.height, cfg.width)));
        }
        if !(0.0..=MAX_NOISE).contains(&cfg.noise) {
            return Err(SpdnError::Config(format!("noise σ must lie in [0, {MAX_NOISE}]")));
        }
        Ok(Renderer { vocab, cfg })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn config(&self) -> &RenderConfig {
        &self.cfg
    }

    pub fn render(&self, text: &str, distortion: Distortion, seed: u64) -> Result<TextSample> {
        let label = self.vocab.encode(text)?;
        if label.is_empty() {
            return Err(SpdnError::Vocabulary("empty text".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = self.sample_layout(label.len(), &mut rng);
        let warp = self.sample_warp(distortion, &layout, label.len(), &mut rng)?;
        let noise_seed = rng.random();
        self.render_with(text, distortion, layout, warp, Some(noise_seed))
    }

    /// Deterministic rendering with explicit geometry; `noise_seed = None` draws a clean image.
    pub fn render_with(
        &self,
        text: &str,
        distortion: Distortion,
        layout: Layout,
        warp: Warp,
        noise_seed: Option<u64>,
    ) -> Result<TextSample> {
        let label = self.vocab.encode(text)?;
        let chars: Vec<char> = text.chars().collect();
        let (h, w) = (self.cfg.height, self.cfg.width);
        let mut image = GrayImage::new(h, w);
        let n_sub = (SUPERSAMPLE * SUPERSAMPLE) as f64;
        for i in 0..h {
            for j in 0..w {
                let mut hits = 0usize;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let x = j as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                        let y = i as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                        let [u, v] = warp.inverse(x, y);
                        if ink_at(&chars, &layout, u, v) {
                            hits += 1;
                        }
                    }
                }
                let cover = hits as f64 / n_sub;
                image.set(i, j, layout.background + (layout.ink - layout.background) * cover);
            }
        }
        if let Some(seed) = noise_seed {
            self.add_noise(&mut image, seed);
        }
        let char_boxes = (0..chars.len())
            .map(|i| {
                let [x, y] = layout.glyph_center(i);
                warp.forward(x, y)
            })
            .collect();
        Ok(TextSample { image, text: text.to_string(), label, distortion, char_boxes, layout, warp })
    }

    /// Background-only canvas (intensity 0) with the configured noise.
    pub fn blank(&self, seed: u64) -> GrayImage {
        let mut image = GrayImage::new(self.cfg.height, self.cfg.width);
        self.add_noise(&mut image, seed);
        image
    }

    fn add_noise(&self, image: &mut GrayImage, seed: u64) {
        if self.cfg.noise == 0.0 {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, self.cfg.noise).expect("σ validated in new");
        for p in &mut image.pixels {
            *p = (*p + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }

    pub fn sample_layout(&self, len: usize, rng: &mut impl Rng) -> Layout {
        let (h, w) = (self.cfg.height as f64, self.cfg.width as f64);
        let (mx, my) = (0.03 * w, 0.12 * h);
        let units = (ADVANCE * len - 1) as f64;
        let nominal = 0.55 * h / GLYPH_H as f64;
        let fit = ((w - 2.0 * mx) / units).min((h - 2.0 * my) / GLYPH_H as f64);
        let scale = nominal.min(fit) * rng.random_range(0.9..=1.0);
        let slack_x = (w - 2.0 * mx - units * scale).max(0.0);
        let slack_y = (h - GLYPH_H as f64 * scale).max(0.0);
        let jitter_y = (0.25 * slack_y).min(0.06 * h);
        let background = rng.random_range(0.0..0.25);
        let ink = rng.random_range(0.75..1.0);
        Layout {
            origin_x: mx + rng.random_range(0.0..=slack_x.min(0.08 * w)),
            origin_y: slack_y / 2.0 + rng.random_range(-jitter_y..=jitter_y),
            scale,
            background,
            ink,
        }
    }

    pub fn sample_warp(&self, d: Distortion, layout: &Layout, len: usize, rng: &mut impl Rng) -> Result<Warp> {
        let (h, w) = (self.cfg.height as f64, self.cfg.width as f64);
        Ok(match d {
            Distortion::None => Warp::Identity,
            Distortion::Perspective => {
                let corners = [[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]];
                let mut moved = corners;
                for p in &mut moved {
                    p[0] += rng.random_range(-MAX_CORNER_SHIFT..=MAX_CORNER_SHIFT) * w;
                    p[1] += rng.random_range(-MAX_CORNER_SHIFT..=MAX_CORNER_SHIFT) * h;
                }
                Warp::Homography { forward: homography(&corners, &moved)?, inverse: homography(&moved, &corners)? }
            }
            Distortion::Curved => {
                let chord = layout.text_width(len).max(layout.scale);
                let magnitude = rng.random_range(0.3..=1.0) * MAX_SAGITTA * h;
                let sagitta = if rng.random_bool(0.5) { magnitude } else { -magnitude };
                let half_chord = chord / 2.0;
                Warp::Arc {
                    center_x: layout.origin_x + half_chord,
                    half_chord,
                    radius: (half_chord * half_chord + sagitta * sagitta) / (2.0 * magnitude),
                    sagitta,
                    lift: sagitta / 2.0,
                }
            }
        })
    }
}

fn ink_at(chars: &[char], layout: &Layout, u: f64, v: f64) -> bool {
    let fu = (u - layout.origin_x) / layout.scale;
    let fv = (v - layout.origin_y) / layout.scale;
    if fu < 0.0 || fv < 0.0 || fv >= GLYPH_H as f64 {
        return false;
    }
    let cell = fu.floor() as usize;
    let (glyph, col) = (cell / ADVANCE, cell % ADVANCE);
    glyph < chars.len() && super::font::inked(chars[glyph], col, fv.floor() as usize)
}
