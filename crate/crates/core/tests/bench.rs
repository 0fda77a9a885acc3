mod common;

use spdn::bench::{encode_all, flops_model, instrument_reads, lstm_flops, measure, recompute, Dims, NONLINEAR};
use spdn::model::DecoderKind;
use spdn::{Model, ModelConfig, Variant};

fn default_dims() -> Dims {
    let mut cfg = ModelConfig::default();
    cfg.decoder.vocab = 37;
    Dims::from_config(&cfg)
}

fn resized(dims: Dims, h: usize, w: usize) -> Dims {
    Dims { h, w, ..dims }
}

#[test]
fn default_dims_are_the_reference_setting() {
    let d = default_dims();
    assert_eq!((d.c, d.h, d.w, d.d_s, d.d_a, d.k), (256, 4, 16, 256, 256, 1));
}

#[test]
fn attention_context_and_bilinear_counts() {
    let d = default_dims();
    let attn = flops_model(Variant::Attention, &d, &[5]);
    // One multiply and one add per channel per position.
    assert_eq!(attn.formula_terms["attn_context"], 32768);
    let serial = flops_model(Variant::Serial, &d, &[5]);
    // Four taps, each a multiply and add per channel, plus the interpolation weights.
    assert_eq!(serial.formula_terms["bilinear"], 3072);
    let k3 = flops_model(Variant::Serial, &Dims { k: 3, ..d }, &[5]);
    assert_eq!(k3.formula_terms["bilinear"], 3 * 3072);
}

#[test]
fn attention_scales_with_positions() {
    let d = default_dims();
    let mechanism = |dims: &Dims| {
        let a = flops_model(Variant::Attention, dims, &[1]);
        a.formula_terms["attn_scores"] + a.formula_terms["attn_softmax"] + a.formula_terms["attn_context"]
    };
    assert_eq!(mechanism(&resized(d, 8, 32)), 4 * mechanism(&d));
    let one = resized(d, 1, 1);
    let a = flops_model(Variant::Attention, &one, &[1]);
    assert_eq!(a.formula_terms["attn_context"], 2 * 256);
    assert_eq!(a.formula_terms["attn_softmax"], 5);
}

#[test]
fn single_point_step_cost_ignores_map_size() {
    let d = default_dims();
    for variant in [Variant::Serial, Variant::Parallel] {
        for k in 1..=4 {
            let small = flops_model(variant, &Dims { k, ..d }, &[1]);
            let large = flops_model(variant, &Dims { k, ..resized(d, 8, 32) }, &[1]);
            assert_eq!(small.per_step, large.per_step, "{variant:?} k={k}");
        }
    }
    let small = flops_model(Variant::Parallel, &d, &[1]);
    let large = flops_model(Variant::Parallel, &resized(d, 8, 32), &[1]);
    assert!(large.fixed > small.fixed);
}

#[test]
fn totals_are_rederivable_from_terms() {
    let d = default_dims();
    for variant in [Variant::Attention, Variant::Serial, Variant::Parallel] {
        let a = flops_model(variant, &d, &[5, 10, 25]);
        for (&t, &total) in &a.per_seq {
            assert_eq!(recompute(&a, t), total);
            assert_eq!(a.per_step * t as u64 + a.fixed, total);
        }
    }
}

#[test]
fn lstm_count_matches_a_tally() {
    let (n, d) = (300u64, 256u64);
    let gates = 4 * d;
    let products = 2 * gates * (n + d);
    let bias_and_sum = 2 * gates;
    let nonlinear = NONLINEAR * (3 * d + d + d);
    let state = 4 * d;
    assert_eq!(lstm_flops(300, 256), products + bias_and_sum + nonlinear + state);
}

#[test]
fn analytic_terms_agree_with_built_modules() {
    for k in 1..=3 {
        let model = common::tiny_model(Variant::Serial, k, false, 1);
        let dims = Dims::from_config(&model.cfg);
        let a = flops_model(Variant::Serial, &dims, &[1]);
        let DecoderKind::Serial(d) = &model.decoder else { unreachable!() };
        assert_eq!(a.formula_terms["pau"], d.pau.flops() + 2 * k as u64);
        assert_eq!(a.formula_terms["fuse"], d.fuse.flops());
        assert_eq!(a.formula_terms["classifier"], d.cls.flops());
    }
}

#[test]
fn attention_reads_every_position_and_single_point_reads_at_most_four() {
    let feats = common::random(&[4, 4, 16], 1);
    let mut cfg = common::tiny_config(Variant::Attention, 1, false);
    cfg.height = 32;
    cfg.width = 128;
    let attn = Model::new(cfg, common::vocab(), 1).unwrap();
    let reads = instrument_reads(&attn, &feats, 5).unwrap();
    assert_eq!(reads, vec![64; 5]);
    for k in [1, 3] {
        let mut model = Model::new(common::tiny_config(Variant::Serial, k, false), common::vocab(), 1).unwrap();
        common::randomize_heads(&mut model, 2);
        let reads = instrument_reads(&model, &feats, 5).unwrap();
        assert!(reads.iter().all(|&r| r >= 1 && r <= 4 * k), "k={k} {reads:?}");
    }
}

#[test]
fn repeated_measurements_agree() {
    let model = common::tiny_model(Variant::Attention, 1, false, 1);
    let images: Vec<_> = (0..4).map(|i| common::random_image(16, 32, i)).collect();
    let feats = encode_all(&model, &images).unwrap();
    let a = measure(&model, &feats, 5, 20, 200).unwrap();
    let b = measure(&model, &feats, 5, 20, 200).unwrap();
    assert!(a.p10_ms <= a.median_ms && a.median_ms <= a.p90_ms);
    let rel = (a.median_ms - b.median_ms).abs() / a.median_ms.min(b.median_ms);
    assert!(rel < 0.2, "{} vs {}", a.median_ms, b.median_ms);
    assert!(measure(&model, &[], 10, 0, 1).is_err());
}
