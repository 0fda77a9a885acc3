mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use spdn::encoder::{Encoder, EncoderConfig};
use spdn::rectifier::{
    pixel_grid, rectify, solve_tps, target_layout, tps_kernel, ControlPoints, Rectifier, RectifierConfig,
};
use spdn::synth::{Distortion, Layout, RenderConfig, Renderer, Vocabulary, Warp};
use spdn::Variant;
use spdn_tensor::{ParamStore, Session, Tensor};

fn perturbed(targets: &[[f64; 2]], seed: u64, amp: f64) -> Vec<[f64; 2]> {
    let mut rng = StdRng::seed_from_u64(seed);
    targets.iter().map(|t| [t[0] + rng.random_range(-amp..amp), t[1] + rng.random_range(-amp..amp)]).collect()
}

#[test]
fn target_layout_is_fixed_and_validated() {
    let a = target_layout(20).unwrap();
    let b = target_layout(20).unwrap();
    assert_eq!(a.len(), 20);
    let bits = |v: &[[f64; 2]]| v.iter().flat_map(|p| [p[0].to_bits(), p[1].to_bits()]).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert!(a[..10].iter().all(|p| p[1] < 0.0) && a[10..].iter().all(|p| p[1] > 0.0));
    assert!(target_layout(5).is_err() && target_layout(4).is_err());
}

#[test]
fn kernel_vanishes_at_zero() {
    assert_eq!(tps_kernel(0.0), 0.0);
    assert!((tps_kernel(4.0) - 4.0 * 4.0f64.ln()).abs() < 1e-15);
}

#[test]
fn identical_points_give_identity() {
    let t = target_layout(20).unwrap();
    let tps = solve_tps(&ControlPoints { source: t.clone(), target: t }).unwrap();
    let id = [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for d in 0..2 {
        for j in 0..3 {
            assert!((tps.affine[d][j] - id[d][j]).abs() <= 1e-10);
        }
    }
    assert!(tps.kernel.iter().flatten().all(|w| w.abs() <= 1e-10));
}

#[test]
fn shifted_points_give_translation() {
    let t = target_layout(20).unwrap();
    let source = t.iter().map(|p| [p[0] + 0.1, p[1]]).collect();
    let tps = solve_tps(&ControlPoints { source, target: t }).unwrap();
    let expect = [[0.1, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for d in 0..2 {
        for j in 0..3 {
            assert!((tps.affine[d][j] - expect[d][j]).abs() <= 1e-8);
        }
    }
    assert!(tps.kernel.iter().flatten().all(|w| w.abs() <= 1e-8));
}

/// The same system assembled and solved with nalgebra, independent of the crate's LU.
fn dense_oracle(source: &[[f64; 2]], target: &[[f64; 2]]) -> DMatrix<f64> {
    let k = target.len();
    let n = k + 3;
    let mut a = DMatrix::zeros(n, n);
    for i in 0..k {
        for j in 0..k {
            let r2 = (target[i][0] - target[j][0]).powi(2) + (target[i][1] - target[j][1]).powi(2);
            a[(i, j)] = if r2 == 0.0 { 0.0 } else { r2 * r2.ln() };
        }
        let p = [1.0, target[i][0], target[i][1]];
        for j in 0..3 {
            a[(i, k + j)] = p[j];
            a[(k + j, i)] = p[j];
        }
    }
    let mut b = DMatrix::zeros(n, 2);
    for (i, s) in source.iter().enumerate() {
        b[(i, 0)] = s[0];
        b[(i, 1)] = s[1];
    }
    a.lu().solve(&b).expect("nonsingular")
}

#[test]
fn random_sources_match_dense_solve_and_interpolate() {
    let t = target_layout(20).unwrap();
    for seed in 0..10 {
        let source = perturbed(&t, seed, 0.2);
        let tps = solve_tps(&ControlPoints { source: source.clone(), target: t.clone() }).unwrap();
        let oracle = dense_oracle(&source, &t);
        for i in 0..20 {
            for d in 0..2 {
                assert!((tps.kernel[i][d] - oracle[(i, d)]).abs() < 1e-9);
            }
        }
        for d in 0..2 {
            for j in 0..3 {
                assert!((tps.affine[d][j] - oracle[(20 + j, d)]).abs() < 1e-9);
            }
        }
        for (tp, sp) in t.iter().zip(&source) {
            let m = tps.map(*tp);
            assert!((m[0] - sp[0]).abs() < 1e-8 && (m[1] - sp[1]).abs() < 1e-8);
        }
    }
}

/// Bilinear resize written directly from the sampling convention.
fn resize_oracle(img: &Tensor, h: usize, w: usize) -> Vec<f64> {
    let (h0, w0) = (img.shape()[1], img.shape()[2]);
    let px = |i: usize, j: usize| img.data()[i * w0 + j];
    let mut out = Vec::new();
    for i in 0..h {
        for j in 0..w {
            let y = i as f64 / (h - 1) as f64 * (h0 - 1) as f64;
            let x = j as f64 / (w - 1) as f64 * (w0 - 1) as f64;
            let (y0, x0) = ((y.floor() as usize).min(h0 - 2), (x.floor() as usize).min(w0 - 2));
            let (fy, fx) = (y - y0 as f64, x - x0 as f64);
            out.push(
                px(y0, x0) * (1.0 - fy) * (1.0 - fx)
                    + px(y0, x0 + 1) * (1.0 - fy) * fx
                    + px(y0 + 1, x0) * fy * (1.0 - fx)
                    + px(y0 + 1, x0 + 1) * fy * fx,
            );
        }
    }
    out
}

#[test]
fn identity_rectification_is_bilinear_resize() {
    let t = target_layout(8).unwrap();
    let tps = solve_tps(&ControlPoints { source: t.clone(), target: t }).unwrap();
    let img = common::random_image(8, 12, 3);
    let out = rectify(&img, &tps, 5, 7).unwrap();
    assert_eq!(out.shape(), &[1, 5, 7]);
    for (a, b) in out.data().iter().zip(resize_oracle(&img, 5, 7)) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn constant_image_stays_constant() {
    let t = target_layout(20).unwrap();
    let tps = solve_tps(&ControlPoints { source: perturbed(&t, 8, 0.3), target: t }).unwrap();
    let img = Tensor::full(&[1, 16, 32], 0.37);
    let out = rectify(&img, &tps, 16, 32).unwrap();
    assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
}

fn rectifier(k: usize, seed: u64) -> (ParamStore, Rectifier) {
    let mut store = ParamStore::new();
    let cfg = RectifierConfig { control_points: k, out_height: 16, out_width: 32 };
    let r = Rectifier::new(&mut store, cfg, &mut StdRng::seed_from_u64(seed)).unwrap();
    (store, r)
}

#[test]
fn initial_prediction_is_the_target_layout() {
    let (store, r) = rectifier(20, 1);
    for seed in 0..3 {
        let cp = r.control_points(&store, &common::random_image(16, 32, seed)).unwrap();
        for (s, t) in cp.source.iter().zip(&cp.target) {
            assert!((s[0] - t[0]).abs() < 1e-12 && (s[1] - t[1]).abs() < 1e-12);
        }
    }
}

#[test]
fn initial_rectification_reproduces_the_input() {
    let (store, r) = rectifier(20, 2);
    let img = common::random_image(16, 32, 5);
    let mut s = Session::inference(&store);
    let x = s.constant(img.clone());
    let y = r.forward(&mut s, x).unwrap();
    for (a, b) in s.value(y).data().iter().zip(img.data()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn recognition_gradient_reaches_localization() {
    let mut model = common::tiny_model(Variant::Serial, 1, true, 4);
    common::randomize_heads(&mut model, 4);
    let img = common::random_image(16, 32, 9);
    let mut s = Session::new(&model.store);
    let feats = model.features(&mut s, &img).unwrap();
    let out = model.decode(&mut s, feats, spdn::decode::DecodeMode::TeacherForced(&[0, 2]), false).unwrap();
    let loss = spdn::training::recognition_loss(&mut s, &out.logits, &[0, 2], model.eos()).unwrap();
    s.backward(loss).unwrap();
    let grads = s.param_grads();
    for (id, name, _) in model.store.iter().filter(|(_, n, _)| n.starts_with("rect.")) {
        assert!(grads.get(id).iter().any(|g| *g != 0.0), "{name} received no gradient");
    }
}

#[test]
fn localize_rectify_mean_pixel_passes_finite_differences() {
    let mut model = common::tiny_model(Variant::Serial, 1, true, 6);
    common::randomize_heads(&mut model, 6);
    let img = common::random_image(16, 32, 10);
    let err = common::fd_error(&model, &|n| n.starts_with("rect."), 200, &|m, s| {
        let x = s.constant(img.clone());
        let y = m.rectified(s, x).unwrap();
        s.mean(y)
    });
    assert!(err < 1e-3, "relative error {err}");
}

/// Rectifying an arc-warped rendering with the generator's own warp brings
/// its encoder features closer to the straight rendering than the raw input.
#[test]
fn known_arc_inverse_straightens_curved_text() {
    let vocab = Vocabulary::from_charset("ABCDEFGH").unwrap();
    let r = Renderer::new(vocab, RenderConfig { height: 32, width: 128, noise: 0.0 }).unwrap();
    let (h, w) = (32usize, 128usize);
    let mut store = ParamStore::new();
    let enc =
        Encoder::new(&mut store, EncoderConfig { stem: 4, widths: [8, 8, 8] }, &mut StdRng::seed_from_u64(3)).unwrap();
    let features = |img: &Tensor| {
        let mut s = Session::inference(&store);
        let x = s.constant(img.clone());
        let f = enc.encode(&mut s, x).unwrap();
        s.value(f).clone()
    };
    let dist = |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let targets = target_layout(20).unwrap();
    let to_pix = |v: f64, n: usize| (v + 1.0) / 2.0 * (n - 1) as f64;
    let to_norm = |p: f64, n: usize| 2.0 * p / (n - 1) as f64 - 1.0;
    let mut wins = 0;
    for seed in 0..5u64 {
        let text = "ABCDEFG";
        let layout = Layout { origin_x: 12.0, origin_y: 8.0, scale: 2.3, background: 0.1, ink: 0.9 };
        let warp = r.sample_warp(Distortion::Curved, &layout, text.len(), &mut StdRng::seed_from_u64(seed)).unwrap();
        let straight = r.render_with(text, Distortion::None, layout, Warp::Identity, None).unwrap();
        let curved = r.render_with(text, Distortion::Curved, layout, warp, None).unwrap();
        // Pixel (i, j) covers [j, j+1) in render space; its center sits at j + 0.5.
        let source: Vec<[f64; 2]> = targets
            .iter()
            .map(|t| {
                let [x, y] = warp.forward(to_pix(t[0], w) + 0.5, to_pix(t[1], h) + 0.5);
                [to_norm(x - 0.5, w), to_norm(y - 0.5, h)]
            })
            .collect();
        let tps = solve_tps(&ControlPoints { source, target: targets.clone() }).unwrap();
        let curved_t = curved.image.to_tensor();
        let fixed = rectify(&curved_t, &tps, h, w).unwrap();
        let f_straight = features(&straight.image.to_tensor());
        let before = dist(&features(&curved_t), &f_straight);
        let after = dist(&features(&fixed), &f_straight);
        if after < before {
            wins += 1;
        }
    }
    assert_eq!(wins, 5);
}

#[test]
fn pixel_grid_spans_the_square() {
    let g = pixel_grid(3, 4);
    assert_eq!(g.len(), 12);
    assert_eq!(g[0], [-1.0, -1.0]);
    assert_eq!(g[11], [1.0, 1.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn affine_sources_are_reproduced_exactly(
        a in prop::array::uniform6(-0.6f64..0.6),
    ) {
        let t = target_layout(12).unwrap();
        let m = [[a[0], 1.0 + a[1], a[2]], [a[3], a[4], 1.0 + a[5]]];
        let apply = |p: [f64; 2]| [m[0][0] + m[0][1] * p[0] + m[0][2] * p[1], m[1][0] + m[1][1] * p[0] + m[1][2] * p[1]];
        let source = t.iter().map(|&p| apply(p)).collect();
        let tps = solve_tps(&ControlPoints { source, target: t }).unwrap();
        prop_assert!(tps.kernel.iter().flatten().all(|w| w.abs() < 1e-8));
        for q in [[0.3, -0.2], [-0.9, 0.9], [0.0, 0.0]] {
            let (got, want) = (tps.map(q), apply(q));
            prop_assert!((got[0] - want[0]).abs() < 1e-8 && (got[1] - want[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn localized_points_stay_in_range(seed in 0u64..1000) {
        let (mut store, r) = rectifier(6, seed);
        let mut rng = StdRng::seed_from_u64(seed);
        let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            for v in store.get_mut(id).data_mut() {
                *v += rng.random_range(-2.0..2.0);
            }
        }
        let cp = r.control_points(&store, &common::random_image(16, 32, seed)).unwrap();
        prop_assert!(cp.source.iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
    }
}
