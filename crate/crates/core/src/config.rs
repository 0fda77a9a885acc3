//! Flat `key = value` run configuration shared by every subcommand.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::decode::DecoderConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Result, SpdnError};
use crate::model::{ModelConfig, Variant};
use crate::synth::{font, CorpusSpec, DistortionMix, RenderConfig, Split, Vocabulary};
use crate::training::{DistanceVariant, TrainConfig};

/// Text form of one configuration value.
pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn render_value(&self) -> String;
}

macro_rules! via_fromstr {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn render_value(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

via_fromstr!(u64, usize, f64, bool, String, Variant, DistanceVariant, Split);

impl ConfigValue for Vec<usize> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.split(',').map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}"))).collect()
    }

    fn render_value(&self) -> String {
        join(self)
    }
}

impl ConfigValue for Vec<Variant> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.split(',').map(|p| p.trim().parse::<Variant>().map_err(|e| e.to_string())).collect()
    }

    fn render_value(&self) -> String {
        join(self)
    }
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

macro_rules! run_config {
    ($($(#[doc = $doc:literal])* $field:ident: $ty:ty = $default:expr,)*) => {
        /// Every tunable of every subcommand.
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $($(#[doc = $doc])* pub $field: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $($field: $default,)* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($field) => {
                        self.$field = <$ty as ConfigValue>::parse_value(value)
                            .map_err(|e| SpdnError::Config(format!("`{key}`: {e}")))?;
                    })*
                    _ => {
                        return Err(SpdnError::Usage(format!(
                            "unknown config key `{key}`; valid keys: {}",
                            Self::KEYS.join(", ")
                        )))
                    }
                }
                Ok(())
            }

            /// Resolved configuration, one `key = value` per line in declaration order.
            pub fn render(&self) -> String {
                let mut out = String::new();
                $(out.push_str(&format!("{} = {}\n", stringify!($field), ConfigValue::render_value(&self.$field)));)*
                out
            }
        }
    };
}

run_config! {
    seed: u64 = 0,
    /// Dataset directory read by train, eval, bench, analyze-attn and visualize.
    data: String = "data".into(),
    n: usize = 1000,
    charset: String = font::DEFAULT_CHARSET.into(),
    min_len: usize = 1,
    max_len: usize = 10,
    mix_none: f64 = 1.0,
    mix_perspective: f64 = 1.0,
    mix_curved: f64 = 1.0,
    height: usize = 32,
    width: usize = 128,
    noise: f64 = 0.05,
    variant: Variant = Variant::Serial,
    k: usize = 1,
    rectifier: bool = true,
    control_points: usize = 20,
    enc_stem: usize = 32,
    enc_widths: Vec<usize> = vec![64, 128, 256],
    hidden: usize = 256,
    attn_dim: usize = 256,
    embed_dim: usize = 64,
    pos_dim: usize = 64,
    pau_hidden: Vec<usize> = vec![128, 64],
    t_max: usize = 25,
    delta_max: f64 = 0.5,
    batch: usize = 100,
    epochs: usize = 10,
    lr_boundaries: Vec<usize> = vec![5, 7],
    lambda: f64 = 1.0,
    dist_loss: DistanceVariant = DistanceVariant::AdjacentL1,
    dist_parallel: bool = false,
    clip: f64 = 5.0,
    rho: f64 = 0.9,
    eps: f64 = 1e-6,
    log_wall_time: bool = false,
    /// Checkpoint read by eval, analyze-attn and visualize.
    checkpoint: String = "best.spdn".into(),
    split: Split = Split::Test,
    /// Sample ids rendered by visualize.
    ids: Vec<usize> = vec![0, 1, 2, 3],
    bench_variants: Vec<Variant> = vec![Variant::Attention, Variant::Serial],
    bench_steps: Vec<usize> = vec![5, 10, 25],
    bench_reps: usize = 100,
    bench_warmup: usize = 10,
    bench_images: usize = 4,
}

fn pair(v: &[usize], key: &str) -> Result<[usize; 2]> {
    match v {
        &[a, b] => Ok([a, b]),
        _ => Err(SpdnError::Config(format!("`{key}` needs exactly two values"))),
    }
}

impl RunConfig {
    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| SpdnError::Usage(format!("config line {}: expected key = value, got {raw:?}", i + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        self.apply_text(&fs::read_to_string(path).map_err(SpdnError::io(path))?)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (key, value) =
            kv.split_once('=').ok_or_else(|| SpdnError::Usage(format!("override {kv:?} is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::from_charset(&self.charset)
    }

    pub fn render_config(&self) -> RenderConfig {
        RenderConfig { height: self.height, width: self.width, noise: self.noise }
    }

    pub fn corpus_spec(&self) -> CorpusSpec {
        CorpusSpec {
            n: self.n,
            min_len: self.min_len,
            max_len: self.max_len,
            mix: DistortionMix { none: self.mix_none, perspective: self.mix_perspective, curved: self.mix_curved },
            seed: self.seed,
        }
    }

    pub fn model_config(&self, vocab: &Vocabulary) -> Result<ModelConfig> {
        let widths = match self.enc_widths[..] {
            [a, b, c] => [a, b, c],
            _ => return Err(SpdnError::Config("`enc_widths` needs exactly three values".into())),
        };
        Ok(ModelConfig {
            variant: self.variant,
            height: self.height,
            width: self.width,
            rectifier: self.rectifier,
            control_points: self.control_points,
            encoder: EncoderConfig { stem: self.enc_stem, widths },
            decoder: DecoderConfig {
                channels: widths[2],
                hidden: self.hidden,
                attn_dim: self.attn_dim,
                embed_dim: self.embed_dim,
                pos_dim: self.pos_dim,
                pau_hidden: pair(&self.pau_hidden, "pau_hidden")?,
                k: self.k,
                t_max: self.t_max,
                vocab: vocab.size(),
                delta_max: self.delta_max,
            },
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            batch: self.batch,
            epochs: self.epochs,
            lr_boundaries: pair(&self.lr_boundaries, "lr_boundaries")?,
            lambda: self.lambda,
            seed: self.seed,
            distance: self.dist_loss,
            dist_parallel: self.dist_parallel,
            clip: self.clip,
            rho: self.rho,
            eps: self.eps,
            log_wall_time: self.log_wall_time,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl FromStr for RunConfig {
    type Err = SpdnError;

    fn from_str(s: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(s)?;
        Ok(cfg)
    }
}
