//! Residual CNN producing the `C×H/8×W/8` feature map.

use rand::Rng;
use spdn_tensor::{ParamStore, Session, Var};

use crate::error::{Result, SpdnError};
use crate::nn::ConvNorm;

/// Downsampling factor of the encoder.
pub const STRIDE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub stem: usize,
    /// Output widths of the three stages; the last one is `C`.
    pub widths: [usize; 3],
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { stem: 32, widths: [64, 128, 256] }
    }
}

impl EncoderConfig {
    pub fn channels(&self) -> usize {
        self.widths[2]
    }
}

#[derive(Debug, Clone)]
struct Stage {
    down: ConvNorm,
    conv: ConvNorm,
    skip: ConvNorm,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
    stem: ConvNorm,
    stages: Vec<Stage>,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, cfg: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        if cfg.stem == 0 || cfg.widths.contains(&0) {
            return Err(SpdnError::Config("encoder widths must be positive".into()));
        }
        let stem = ConvNorm::new(store, "enc.stem", 1, cfg.stem, 3, 1, rng)?;
        let mut stages = Vec::new();
        let mut c_in = cfg.stem;
        for (i, &c_out) in cfg.widths.iter().enumerate() {
            let name = format!("enc.s{}", i + 1);
            stages.push(Stage {
                down: ConvNorm::new(store, &format!("{name}.down"), c_in, c_out, 3, 2, rng)?,
                conv: ConvNorm::new(store, &format!("{name}.conv"), c_out, c_out, 3, 1, rng)?,
                skip: ConvNorm::new(store, &format!("{name}.skip"), c_in, c_out, 1, 2, rng)?,
            });
            c_in = c_out;
        }
        Ok(Encoder { cfg, stem, stages })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn check_extents(h: usize, w: usize) -> Result<()> {
        if h == 0 || w == 0 || !h.is_multiple_of(STRIDE) || !w.is_multiple_of(STRIDE) {
            return Err(SpdnError::Config(format!("image extents {h}×{w} are not positive multiples of {STRIDE}")));
        }
        Ok(())
    }

    /// `1×H×W` image → `C×H/8×W/8` features.
    pub fn encode(&self, s: &mut Session, image: Var) -> Result<Var> {
        match s.shape(image) {
            &[1, h, w] => Self::check_extents(h, w)?,
            other => return Err(SpdnError::Config(format!("encoder input {other:?} is not 1×H×W"))),
        }
        let x = self.stem.forward(s, image)?;
        let mut x = s.relu(x);
        for stage in &self.stages {
            let y = stage.down.forward(s, x)?;
            let y = s.relu(y);
            let y = stage.conv.forward(s, y)?;
            let skip = stage.skip.forward(s, x)?;
            let sum = s.add(y, skip)?;
            x = s.relu(sum);
        }
        Ok(x)
    }

    /// Multiply-add count of one forward pass on an `h×w` input (convolutions only).
    pub fn flops(&self, h: usize, w: usize) -> u64 {
        let conv =
            |c_in: usize, c_out: usize, k: usize, positions: usize| 2 * (c_in * k * k * c_out * positions) as u64;
        let mut total = conv(1, self.cfg.stem, 3, h * w);
        let (mut c_in, mut hh, mut ww) = (self.cfg.stem, h, w);
        for &c_out in &self.cfg.widths {
            hh /= 2;
            ww /= 2;
            let p = hh * ww;
            total += conv(c_in, c_out, 3, p) + conv(c_out, c_out, 3, p) + conv(c_in, c_out, 1, p);
            c_in = c_out;
        }
        total
    }
}
