//! Single-point decoding network (SPDN) for text recognition, with an
//! attention-decoder baseline, synthetic data, training and benchmarks.

pub mod attn_decoder;
pub mod bench;
pub mod cli;
pub mod config;
pub mod decode;
pub mod encoder;
pub mod error;
pub mod image;
pub mod model;
pub mod nn;
pub mod rectifier;
pub mod sp_decoder;
pub mod synth;
pub mod training;

pub use error::{Result, SpdnError};
pub use model::{Model, ModelConfig, Variant};
