//! Grayscale canvases and the binary PGM/PPM formats.

use std::fs;
use std::path::Path;

use spdn_tensor::Tensor;

use crate::error::{Result, SpdnError};

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize) -> Self {
        GrayImage { height, width, pixels: vec![0.0; height * width] }
    }

    /// Accepts `1×H×W` or `H×W` tensors.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (height, width) = match t.shape() {
            [1, h, w] | [h, w] => (*h, *w),
            s => return Err(SpdnError::Usage(format!("tensor {s:?} is not a single-channel image"))),
        };
        Ok(GrayImage { height, width, pixels: t.data().to_vec() })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, self.height, self.width], self.pixels.clone()).expect("extents match")
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().map(|&v| quantize(v)));
        out
    }

    pub fn decode_pgm(bytes: &[u8]) -> Result<Self> {
        let (fields, body) = header(bytes, b"P5")?;
        let [width, height, maxval] = fields;
        if maxval != 255 || body.len() != width * height {
            return Err(SpdnError::Dataset(format!(
                "PGM payload of {} bytes for {width}×{height}, maxval {maxval}",
                body.len()
            )));
        }
        let pixels = body.iter().map(|&b| f64::from(b) / 255.0).collect();
        Ok(GrayImage { height, width, pixels })
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode_pgm()).map_err(SpdnError::io(path))
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        Self::decode_pgm(&fs::read(path).map_err(SpdnError::io(path))?)
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn from_gray(img: &GrayImage) -> Self {
        let pixels = img.pixels.iter().map(|&v| [quantize(v); 3]).collect();
        RgbImage { height: img.height, width: img.width, pixels }
    }

    pub fn get(&self, y: usize, x: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn put(&mut self, y: isize, x: isize, color: [u8; 3]) {
        if y >= 0 && x >= 0 && (y as usize) < self.height && (x as usize) < self.width {
            self.pixels[y as usize * self.width + x as usize] = color;
        }
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().flatten());
        out
    }

    pub fn decode_ppm(bytes: &[u8]) -> Result<Self> {
        let (fields, body) = header(bytes, b"P6")?;
        let [width, height, _] = fields;
        if body.len() != width * height * 3 {
            return Err(SpdnError::Dataset("PPM payload size mismatch".into()));
        }
        let pixels = body.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        Ok(RgbImage { height, width, pixels })
    }
}

/// Parses `magic width height maxval` and returns the payload after the single
/// whitespace byte that ends the header.
fn header<'a>(bytes: &'a [u8], magic: &[u8]) -> Result<([usize; 3], &'a [u8])> {
    let bad = |what: &str| SpdnError::Dataset(format!("malformed netpbm header: {what}"));
    if !bytes.starts_with(magic) {
        return Err(bad("magic"));
    }
    let mut pos = magic.len();
    let mut fields = [0usize; 3];
    for f in &mut fields {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos]).ok().and_then(|s| s.parse().ok()).ok_or_else(|| bad("field"))?;
    }
    if pos >= bytes.len() {
        return Err(bad("truncated"));
    }
    Ok((fields, &bytes[pos + 1..]))
}
