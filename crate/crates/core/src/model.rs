//! Full recognizer: optional rectifier, encoder, and one decoder variant.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spdn_tensor::{checkpoint, ParamStore, Session, Tensor, Var};

use crate::attn_decoder::AttnDecoder;
use crate::decode::{DecodeMode, DecodeOutput, DecoderConfig};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Result, SpdnError};
use crate::rectifier::{Rectifier, RectifierConfig};
use crate::sp_decoder::{ParallelDecoder, SampleTrajectory, SerialDecoder};
use crate::synth::{sample_seed, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Attention,
    Serial,
    Parallel,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Attention, Variant::Serial, Variant::Parallel];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Attention => "attention",
            Variant::Serial => "serial",
            Variant::Parallel => "parallel",
        }
    }

    fn code(self) -> f64 {
        match self {
            Variant::Attention => 0.0,
            Variant::Serial => 1.0,
            Variant::Parallel => 2.0,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = SpdnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(Variant::Attention),
            "serial" | "serial_sp" => Ok(Variant::Serial),
            "parallel" | "parallel_sp" => Ok(Variant::Parallel),
            _ => Err(SpdnError::Config(format!("unknown variant {s:?} (expected attention, serial or parallel)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub height: usize,
    pub width: usize,
    pub rectifier: bool,
    pub control_points: usize,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Serial,
            height: 32,
            width: 128,
            rectifier: true,
            control_points: 20,
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn feature_extents(&self) -> (usize, usize) {
        (self.height / crate::encoder::STRIDE, self.width / crate::encoder::STRIDE)
    }

    fn to_meta(self) -> Vec<f64> {
        let (e, d) = (self.encoder, self.decoder);
        let ints = [
            self.height,
            self.width,
            usize::from(self.rectifier),
            self.control_points,
            e.stem,
            e.widths[0],
            e.widths[1],
            e.widths[2],
            d.hidden,
            d.attn_dim,
            d.embed_dim,
            d.pos_dim,
            d.pau_hidden[0],
            d.pau_hidden[1],
            d.k,
            d.t_max,
            d.vocab,
        ];
        let mut meta = vec![self.variant.code()];
        meta.extend(ints.iter().map(|&v| v as f64));
        meta.push(d.delta_max);
        meta
    }

    fn from_meta(m: &[f64]) -> Result<Self> {
        if m.len() != 19 || m[1..18].iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
            return Err(SpdnError::Config("checkpoint architecture record is malformed".into()));
        }
        let u = |i: usize| m[i] as usize;
        let variant = match u(0) {
            0 => Variant::Attention,
            1 => Variant::Serial,
            2 => Variant::Parallel,
            _ => return Err(SpdnError::Config("checkpoint names an unknown variant".into())),
        };
        Ok(ModelConfig {
            variant,
            height: u(1),
            width: u(2),
            rectifier: u(3) == 1,
            control_points: u(4),
            encoder: EncoderConfig { stem: u(5), widths: [u(6), u(7), u(8)] },
            decoder: DecoderConfig {
                channels: u(8),
                hidden: u(9),
                attn_dim: u(10),
                embed_dim: u(11),
                pos_dim: u(12),
                pau_hidden: [u(13), u(14)],
                k: u(15),
                t_max: u(16),
                vocab: u(17),
                delta_max: m[18],
            },
        })
    }
}

#[derive(Debug, Clone)]
pub enum DecoderKind {
    Attention(AttnDecoder),
    Serial(SerialDecoder),
    Parallel(ParallelDecoder),
}

/// Greedy recognition of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Recognition {
    pub symbols: Vec<usize>,
    pub text: String,
    pub steps: usize,
    /// Sample points per step (single-point variants).
    pub trajectory: Option<SampleTrajectory>,
    /// Attention weights per step (attention variant).
    pub attention: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub rectifier: Option<Rectifier>,
    pub encoder: Encoder,
    pub decoder: DecoderKind,
}

const META_VOCAB: &str = "meta.vocab";
const META_ARCH: &str = "meta.arch";

impl Model {
    pub fn new(mut cfg: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        Encoder::check_extents(cfg.height, cfg.width)?;
        cfg.decoder.channels = cfg.encoder.channels();
        cfg.decoder.vocab = vocab.size();
        if cfg.decoder.t_max < 2 {
            return Err(SpdnError::Config("T_max must be at least 2".into()));
        }
        let rng = |i: u64| ChaCha8Rng::seed_from_u64(sample_seed(seed, i));
        let mut store = ParamStore::new();
        let rectifier = if cfg.rectifier {
            let rc =
                RectifierConfig { control_points: cfg.control_points, out_height: cfg.height, out_width: cfg.width };
            Some(Rectifier::new(&mut store, rc, &mut rng(0))?)
        } else {
            None
        };
        let encoder = Encoder::new(&mut store, cfg.encoder, &mut rng(1))?;
        let decoder = match cfg.variant {
            Variant::Attention => DecoderKind::Attention(AttnDecoder::new(&mut store, cfg.decoder, &mut rng(2))?),
            Variant::Serial => DecoderKind::Serial(SerialDecoder::new(&mut store, cfg.decoder, &mut rng(2))?),
            Variant::Parallel => DecoderKind::Parallel(ParallelDecoder::new(&mut store, cfg.decoder, &mut rng(2))?),
        };
        Ok(Model { cfg, vocab, store, rectifier, encoder, decoder })
    }

    pub fn eos(&self) -> usize {
        self.vocab.eos()
    }

    /// Rectified (or passed-through) image, `1×H×W`.
    pub fn rectified(&self, s: &mut Session, image: Var) -> Result<Var> {
        let shape = s.shape(image).to_vec();
        if shape != [1, self.cfg.height, self.cfg.width] {
            return Err(SpdnError::Config(format!(
                "image {shape:?} does not match the configured 1×{}×{}",
                self.cfg.height, self.cfg.width
            )));
        }
        match &self.rectifier {
            Some(r) => r.forward(s, image),
            None => Ok(image),
        }
    }

    pub fn features(&self, s: &mut Session, image: &Tensor) -> Result<Var> {
        let img = s.constant(image.clone());
        let x = self.rectified(s, img)?;
        self.encoder.encode(s, x)
    }

    pub fn decode(&self, s: &mut Session, feats: Var, mode: DecodeMode, trace: bool) -> Result<DecodeOutput> {
        match &self.decoder {
            DecoderKind::Attention(d) => d.decode(s, feats, mode, trace),
            DecoderKind::Serial(d) => d.decode(s, feats, mode, trace),
            DecoderKind::Parallel(d) => d.decode(s, feats, mode, trace),
        }
    }

    pub fn recognize(&self, image: &Tensor) -> Result<Recognition> {
        let mut s = Session::inference(&self.store);
        let feats = self.features(&mut s, image)?;
        let out = self.decode(&mut s, feats, DecodeMode::Greedy, false)?;
        let eos = self.eos();
        let symbols = out.symbols(eos);
        let steps = out.steps(eos);
        let trajectory = (!out.points.is_empty()).then(|| SampleTrajectory::from_output(&s, &out, eos));
        let attention = out.attention.iter().map(|&w| s.value(w).data().to_vec()).collect();
        Ok(Recognition { text: self.vocab.decode(&symbols), symbols, steps, trajectory, attention })
    }

    /// Parameters preceded by the vocabulary and architecture records.
    pub fn checkpoint_store(&self) -> Result<ParamStore> {
        let mut out = ParamStore::new();
        let codes = self.vocab.symbols().iter().map(|&c| f64::from(u32::from(c))).collect();
        out.add(META_VOCAB, Tensor::vector(codes))?;
        out.add(META_ARCH, Tensor::vector(self.cfg.to_meta()))?;
        for (_, name, t) in self.store.iter() {
            out.add(name, t.clone())?;
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(checkpoint::save(&self.checkpoint_store()?, path)?)
    }

    pub fn from_checkpoint(stored: &ParamStore) -> Result<Self> {
        let missing = |what: &str| SpdnError::Config(format!("checkpoint lacks {what}"));
        let codes = stored.by_name(META_VOCAB).ok_or_else(|| missing(META_VOCAB))?;
        let symbols = codes
            .data()
            .iter()
            .map(|&c| char::from_u32(c as u32).ok_or_else(|| SpdnError::Config("bad vocabulary code".into())))
            .collect::<Result<Vec<char>>>()?;
        let cfg = ModelConfig::from_meta(stored.by_name(META_ARCH).ok_or_else(|| missing(META_ARCH))?.data())?;
        let mut model = Model::new(cfg, Vocabulary::new(symbols)?, 0)?;
        let loaded = model.store.load_from(stored)?;
        if loaded != model.store.len() {
            return Err(SpdnError::Config(format!("checkpoint holds {loaded} of {} parameters", model.store.len())));
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&checkpoint::load(path)?)
    }
}
