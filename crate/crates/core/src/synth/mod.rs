//! Synthetic text images: bitmap glyphs, distortions, corpus files.

mod corpus;
pub mod font;
mod render;
mod vocab;

pub use corpus::{
    generate_sample, image_file, make_corpus, parse_manifest, sample_seed, CorpusSpec, Dataset, DistortionMix, Example,
    ManifestRow, Split, MANIFEST_HEADER,
};
pub use render::{
    homography, Distortion, Layout, RenderConfig, Renderer, TextSample, Warp, MAX_CORNER_SHIFT, MAX_NOISE, MAX_SAGITTA,
};
pub use vocab::Vocabulary;
