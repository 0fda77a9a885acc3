use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spdn_tensor::Tensor;

use crate::error::{Result, SpdnError};
use crate::image::GrayImage;
use crate::synth::{Distortion, Renderer, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    /// 80/10/10 partition by position: the first 80% are train, the next 10% val.
    pub fn for_index(id: usize, n: usize) -> Split {
        let (train, val) = (n * 8 / 10, n / 10);
        if id < train {
            Split::Train
        } else if id < train + val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = SpdnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(SpdnError::Config(format!("unknown split {s:?} (expected train, val or test)"))),
        }
    }
}

/// Relative weights of the three distortions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionMix {
    pub none: f64,
    pub perspective: f64,
    pub curved: f64,
}

impl DistortionMix {
    pub const STRAIGHT: DistortionMix = DistortionMix { none: 1.0, perspective: 0.0, curved: 0.0 };

    fn draw(&self, rng: &mut impl Rng) -> Distortion {
        let total = self.none + self.perspective + self.curved;
        let u = rng.random_range(0.0..total);
        if u < self.none {
            Distortion::None
        } else if u < self.none + self.perspective {
            Distortion::Perspective
        } else {
            Distortion::Curved
        }
    }

    fn validate(&self) -> Result<()> {
        let w = [self.none, self.perspective, self.curved];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(SpdnError::Config(format!("invalid distortion mix {w:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub n: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub mix: DistortionMix,
    pub seed: u64,
}

/// Mixes a run seed and a sample counter into an independent stream seed.
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub id: usize,
    pub split: Split,
    pub text: String,
    pub distortion: Distortion,
}

pub const MANIFEST_HEADER: &str = "id\tsplit\tlabel\tdistortion";

pub fn image_file(id: usize) -> String {
    format!("{id:06}.pgm")
}

/// Draws the text and distortion of sample `id`, then renders it.
pub fn generate_sample(renderer: &Renderer, spec: &CorpusSpec, id: usize) -> Result<(ManifestRow, GrayImage)> {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(spec.seed, id as u64));
    let len = rng.random_range(spec.min_len..=spec.max_len);
    let symbols = renderer.vocab().symbols();
    let text: String = (0..len).map(|_| symbols[rng.random_range(0..symbols.len())]).collect();
    let distortion = spec.mix.draw(&mut rng);
    let sample = renderer.render(&text, distortion, rng.random())?;
    let row = ManifestRow { id, split: Split::for_index(id, spec.n), text, distortion };
    Ok((row, sample.image))
}

/// Writes `manifest.tsv`, `vocab.txt` and one PGM per sample into `dir`.
pub fn make_corpus(renderer: &Renderer, spec: &CorpusSpec, t_max: usize, dir: &Path) -> Result<Vec<ManifestRow>> {
    if spec.n == 0 {
        return Err(SpdnError::Config("corpus size n must be at least 1".into()));
    }
    if spec.min_len < 1 || spec.min_len > spec.max_len || spec.max_len + 1 > t_max {
        return Err(SpdnError::Config(format!(
            "length range [{}, {}] must lie within [1, {}]",
            spec.min_len,
            spec.max_len,
            t_max.saturating_sub(1)
        )));
    }
    spec.mix.validate()?;
    fs::create_dir_all(dir).map_err(SpdnError::io(dir))?;
    let mut rows = Vec::with_capacity(spec.n);
    let mut manifest = format!("{MANIFEST_HEADER}\n");
    for id in 0..spec.n {
        let (row, image) = generate_sample(renderer, spec, id)?;
        image.write_pgm(&dir.join(image_file(id)))?;
        manifest.push_str(&format!("{:06}\t{}\t{}\t{}\n", row.id, row.split, row.text, row.distortion));
        rows.push(row);
    }
    let path = dir.join("manifest.tsv");
    fs::write(&path, manifest).map_err(SpdnError::io(&path))?;
    let path = dir.join("vocab.txt");
    fs::write(&path, renderer.vocab().to_text()).map_err(SpdnError::io(&path))?;
    Ok(rows)
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(SpdnError::Dataset("manifest header missing".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split('\t').collect();
            let [id, split, text, distortion] = cols[..] else {
                return Err(SpdnError::Dataset(format!("manifest line {}: expected 4 columns", i + 2)));
            };
            let id = id.parse().map_err(|_| SpdnError::Dataset(format!("manifest line {}: bad id {id:?}", i + 2)))?;
            Ok(ManifestRow { id, split: split.parse()?, text: text.to_string(), distortion: distortion.parse()? })
        })
        .collect()
}

/// One loaded sample.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: usize,
    pub split: Split,
    pub text: String,
    pub label: Vec<usize>,
    pub distortion: Distortion,
    pub image: Tensor,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(SpdnError::io(&path))
        };
        let vocab = Vocabulary::parse(&read("vocab.txt")?)?;
        let rows = parse_manifest(&read("manifest.tsv")?)?;
        let mut examples = Vec::with_capacity(rows.len());
        for row in rows {
            let label = vocab.encode(&row.text)?;
            let image = GrayImage::read_pgm(&dir.join(image_file(row.id)))?.to_tensor();
            examples.push(Example {
                id: row.id,
                split: row.split,
                text: row.text,
                label,
                distortion: row.distortion,
                image,
            });
        }
        Ok(Dataset { vocab, examples })
    }

    pub fn split(&self, split: Split) -> Vec<&Example> {
        self.examples.iter().filter(|e| e.split == split).collect()
    }

    pub fn image_extents(&self) -> Option<(usize, usize)> {
        self.examples.first().map(|e| (e.image.shape()[1], e.image.shape()[2]))
    }
}
