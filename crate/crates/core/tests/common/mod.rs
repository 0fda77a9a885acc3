#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use spdn::decode::DecoderConfig;
use spdn::encoder::EncoderConfig;
use spdn::synth::Vocabulary;
use spdn::{Model, ModelConfig, Variant};
use spdn_tensor::Tensor;

pub fn vocab() -> Vocabulary {
    Vocabulary::from_charset("ABCD").unwrap()
}

/// 16×32 canvas, 2×4 feature map, widths small enough for exhaustive finite differences.
pub fn tiny_config(variant: Variant, k: usize, rectifier: bool) -> ModelConfig {
    ModelConfig {
        variant,
        height: 16,
        width: 32,
        rectifier,
        control_points: 6,
        encoder: EncoderConfig { stem: 2, widths: [3, 3, 4] },
        decoder: DecoderConfig {
            channels: 4,
            hidden: 5,
            attn_dim: 4,
            embed_dim: 3,
            pos_dim: 3,
            pau_hidden: [4, 3],
            k,
            t_max: 5,
            vocab: 5,
            delta_max: 0.5,
        },
    }
}

pub fn tiny_model(variant: Variant, k: usize, rectifier: bool, seed: u64) -> Model {
    Model::new(tiny_config(variant, k, rectifier), vocab(), seed).unwrap()
}

/// Replaces every parameter whose name ends in `.l3.w` or `.l3.b` (zero-initialized heads) by
/// small random values so gradients through them are exercised.
pub fn randomize_heads(model: &mut Model, seed: u64) {
    let mut rng = StdRng::seed_from_u64(seed);
    let ids: Vec<_> = model
        .store
        .iter()
        .filter(|(_, name, _)| name.contains(".l3.") || name.starts_with("rect.fc2"))
        .map(|(id, _, _)| id)
        .collect();
    for id in ids {
        let t = model.store.get_mut(id);
        for v in t.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
}

pub fn random_image(h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = StdRng::seed_from_u64(seed);
    Tensor::uniform(&[1, h, w], 0.0, 1.0, &mut rng)
}

pub fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = StdRng::seed_from_u64(seed);
    Tensor::randn(shape, 1.0, &mut rng)
}

use spdn_tensor::check::relative_error;
use spdn_tensor::{Session, Var};

pub const FD_STEP: f64 = 1e-5;

/// Relative error between the autodiff gradient of `loss` and central
/// differences over the parameters selected by `select`; tensors longer than
/// `cap` are checked on `cap` evenly spread coordinates.
pub fn fd_error(
    model: &Model,
    select: &dyn Fn(&str) -> bool,
    cap: usize,
    loss: &dyn Fn(&Model, &mut Session) -> Var,
) -> f64 {
    fd_error_with_step(model, select, cap, FD_STEP, loss)
}

/// [`fd_error`] with an explicit probe step. Through the image sampler a step
/// must stay inside one bilinear cell, so rectified models need a smaller one.
pub fn fd_error_with_step(
    model: &Model,
    select: &dyn Fn(&str) -> bool,
    cap: usize,
    step: f64,
    loss: &dyn Fn(&Model, &mut Session) -> Var,
) -> f64 {
    let mut s = Session::new(&model.store);
    let l = loss(model, &mut s);
    s.backward(l).unwrap();
    let grads = s.param_grads();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut work = model.clone();
    let eval = |m: &Model| {
        let mut s = Session::inference(&m.store);
        let l = loss(m, &mut s);
        s.value(l).item()
    };
    let ids: Vec<_> = model.store.iter().filter(|(_, n, _)| select(n)).map(|(id, _, t)| (id, t.len())).collect();
    for (id, len) in ids {
        let coords: Vec<usize> =
            if len <= cap { (0..len).collect() } else { (0..cap).map(|j| j * len / cap).collect() };
        for i in coords {
            let orig = work.store.get(id).data()[i];
            work.store.get_mut(id).data_mut()[i] = orig + step;
            let plus = eval(&work);
            work.store.get_mut(id).data_mut()[i] = orig - step;
            let minus = eval(&work);
            work.store.get_mut(id).data_mut()[i] = orig;
            numeric.push((plus - minus) / (2.0 * step));
            analytic.push(grads.get(id)[i]);
        }
    }
    assert!(!analytic.is_empty(), "no parameters selected");
    relative_error(&analytic, &numeric)
}
