//! Central finite differences, independent of the autodiff rules they check.

use crate::tensor::Tensor;

/// `(f(x + h e_i) − f(x − h e_i)) / 2h` for each requested coordinate of input `which`.
pub fn numeric_grad(
    f: &mut dyn FnMut(&[Tensor]) -> f64,
    inputs: &[Tensor],
    which: usize,
    coords: &[usize],
    step: f64,
) -> Vec<f64> {
    let mut work = inputs.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = work[which].data()[i];
            work[which].data_mut()[i] = orig + step;
            let plus = f(&work);
            work[which].data_mut()[i] = orig - step;
            let minus = f(&work);
            work[which].data_mut()[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute gap when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom < 1e-12 {
        diff
    } else {
        diff / denom
    }
}

use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::Result;
use crate::linalg::LuFactors;
use crate::tape::{Tape, Var};

pub const FD_STEP: f64 = 1e-5;

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub name: &'static str,
    pub rel_error: f64,
}

/// Compare autodiff and central differences for `build` applied to `inputs`.
/// The scalar checked is `Σ out ⊙ r` for a fixed random projection `r`.
pub fn check_op(
    name: &'static str,
    inputs: &[Tensor],
    differentiable: &[bool],
    build: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>,
    rng: &mut StdRng,
) -> Result<OpCheck> {
    let forward = |xs: &[Tensor]| -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.value(out).clone())
    };
    let probe = forward(inputs)?;
    let proj = Tensor::randn(probe.shape(), 1.0, rng);

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .zip(differentiable)
        .map(|(x, &d)| if d { tape.leaf(x.clone()) } else { tape.constant(x.clone()) })
        .collect();
    let out = build(&mut tape, &vars)?;
    let r = tape.constant(proj.clone());
    let prod = tape.mul(out, r)?;
    let loss = tape.sum(prod);
    tape.backward(loss)?;

    let mut f = |xs: &[Tensor]| -> f64 {
        let out = forward(xs).expect("forward succeeded once");
        out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
    };
    let mut worst = 0.0f64;
    for (i, &d) in differentiable.iter().enumerate() {
        if !d {
            continue;
        }
        let coords: Vec<usize> = (0..inputs[i].len()).collect();
        let numeric = numeric_grad(&mut f, inputs, i, &coords, FD_STEP);
        let analytic = tape.grad(vars[i]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; coords.len()]);
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(OpCheck { name, rel_error: worst })
}

/// Values at least `margin` away from every kink in `kinks`.
fn away_from(rng: &mut StdRng, shape: &[usize], lo: f64, hi: f64, kinks: &[f64], margin: f64) -> Tensor {
    Tensor::from_fn(shape, |_| loop {
        let v = rng.random_range(lo..hi);
        if kinks.iter().all(|k| (v - k).abs() > margin) {
            break v;
        }
    })
}

/// Normalized points whose pixel coordinates stay clear of grid lines and the border.
fn sample_points(rng: &mut StdRng, n: usize, h: usize, w: usize) -> Tensor {
    let coord = |rng: &mut StdRng, extent: usize| loop {
        let v: f64 = rng.random_range(-1.2..1.2);
        if (v.abs() - 1.0).abs() < 1e-3 {
            continue;
        }
        let pix = (v.clamp(-1.0, 1.0) + 1.0) * 0.5 * (extent - 1) as f64;
        if v.abs() > 1.0 || (pix - pix.round()).abs() > 1e-3 {
            break v;
        }
    };
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        data.push(coord(rng, w));
        data.push(coord(rng, h));
    }
    Tensor::new(vec![n, 2], data).expect("n×2")
}

/// Finite-difference check of every differentiable tape op for one seed.
pub fn op_gradient_suite(seed: u64) -> Result<Vec<OpCheck>> {
    let mut rng = StdRng::seed_from_u64(seed);
    let rng = &mut rng;
    let mut out = Vec::new();
    let n = |rng: &mut StdRng, shape: &[usize]| Tensor::randn(shape, 1.0, rng);

    let (a, b) = (n(rng, &[3, 4]), n(rng, &[4, 2]));
    out.push(check_op("matmul", &[a, b], &[true, true], &|t, v| t.matmul(v[0], v[1]), rng)?);
    let (a, b) = (n(rng, &[5, 3]), n(rng, &[3]));
    out.push(check_op("matvec", &[a, b], &[true, true], &|t, v| t.matmul(v[0], v[1]), rng)?);
    let (a, b) = (n(rng, &[4]), n(rng, &[4, 3]));
    out.push(check_op("vecmat", &[a, b], &[true, true], &|t, v| t.matmul(v[0], v[1]), rng)?);

    let (x, k) = (n(rng, &[2, 5, 6]), n(rng, &[3, 2, 3, 3]));
    out.push(check_op("conv2d_s1p1", &[x, k], &[true, true], &|t, v| t.conv2d(v[0], v[1], 1, 1), rng)?);
    let (x, k) = (n(rng, &[2, 8, 8]), n(rng, &[3, 2, 3, 3]));
    out.push(check_op("conv2d_s2p1", &[x.clone(), k], &[true, true], &|t, v| t.conv2d(v[0], v[1], 2, 1), rng)?);
    let k1 = n(rng, &[3, 2, 1, 1]);
    out.push(check_op("conv2d_1x1_s2", &[x, k1], &[true, true], &|t, v| t.conv2d(v[0], v[1], 2, 0), rng)?);

    let (a, b) = (n(rng, &[2, 3]), n(rng, &[2, 3]));
    out.push(check_op("add", &[a.clone(), b.clone()], &[true, true], &|t, v| t.add(v[0], v[1]), rng)?);
    out.push(check_op("sub", &[a.clone(), b.clone()], &[true, true], &|t, v| t.sub(v[0], v[1]), rng)?);
    out.push(check_op("mul", &[a.clone(), b], &[true, true], &|t, v| t.mul(v[0], v[1]), rng)?);
    out.push(check_op("scale", std::slice::from_ref(&a), &[true], &|t, v| Ok(t.scale(v[0], -1.7)), rng)?);
    out.push(check_op("tanh", std::slice::from_ref(&a), &[true], &|t, v| Ok(t.tanh(v[0])), rng)?);
    out.push(check_op("sigmoid", &[a], &[true], &|t, v| Ok(t.sigmoid(v[0])), rng)?);
    let kinked = away_from(rng, &[7], -2.0, 2.0, &[0.0, -0.5, 0.5], 1e-3);
    out.push(check_op("relu", std::slice::from_ref(&kinked), &[true], &|t, v| Ok(t.relu(v[0])), rng)?);
    out.push(check_op("abs", std::slice::from_ref(&kinked), &[true], &|t, v| Ok(t.abs(v[0])), rng)?);
    out.push(check_op("clamp", &[kinked], &[true], &|t, v| Ok(t.clamp(v[0], -0.5, 0.5)), rng)?);

    let logits = n(rng, &[7]);
    out.push(check_op("softmax", std::slice::from_ref(&logits), &[true], &|t, v| t.softmax(v[0]), rng)?);
    let target = rng.random_range(0..7);
    out.push(check_op("cross_entropy", &[logits], &[true], &|t, v| t.cross_entropy(v[0], target), rng)?);

    let (a, b) = (n(rng, &[2, 3]), n(rng, &[2, 2]));
    out.push(check_op("concat_axis1", &[a, b], &[true, true], &|t, v| t.concat(&[v[0], v[1]], 1), rng)?);
    let (a, b, c) = (n(rng, &[3]), n(rng, &[2]), n(rng, &[4]));
    out.push(check_op("concat_axis0", &[a, b, c], &[true, true, true], &|t, v| t.concat(v, 0), rng)?);

    let table = n(rng, &[5, 3]);
    let idx = rng.random_range(0..5);
    out.push(check_op("embedding", &[table], &[true], &|t, v| t.embedding(v[0], idx), rng)?);

    let map = n(rng, &[3, 5, 7]);
    let pts = sample_points(rng, 6, 5, 7);
    out.push(check_op("grid_sample", &[map, pts], &[true, true], &|t, v| t.grid_sample(v[0], v[1]), rng)?);
    let map = n(rng, &[2, 4, 16]);
    let pt = sample_points(rng, 1, 4, 16).reshape(&[2])?;
    out.push(check_op("bilinear_sample", &[map, pt], &[true, true], &|t, v| t.bilinear_sample(v[0], v[1]), rng)?);

    let a = n(rng, &[2, 3]);
    out.push(check_op("sum", std::slice::from_ref(&a), &[true], &|t, v| Ok(t.sum(v[0])), rng)?);
    out.push(check_op("mean", std::slice::from_ref(&a), &[true], &|t, v| Ok(t.mean(v[0])), rng)?);
    out.push(check_op("reshape", std::slice::from_ref(&a), &[true], &|t, v| t.reshape(v[0], &[3, 2]), rng)?);
    out.push(check_op("transpose", std::slice::from_ref(&a), &[true], &|t, v| t.transpose(v[0]), rng)?);
    out.push(check_op("slice", &[a], &[true], &|t, v| t.slice(v[0], 1, 4), rng)?);

    let (m, bias) = (n(rng, &[4, 3]), n(rng, &[3]));
    out.push(check_op("add_broadcast", &[m, bias], &[true, true], &|t, v| t.add_broadcast(v[0], v[1]), rng)?);
    let (m, bias) = (n(rng, &[3, 2, 4]), n(rng, &[3]));
    out.push(check_op("add_channel_bias", &[m, bias], &[true, true], &|t, v| t.add_channel_bias(v[0], v[1]), rng)?);
    let (x, g, b) = (n(rng, &[3, 2, 5]), n(rng, &[3]), n(rng, &[3]));
    out.push(check_op(
        "instance_norm",
        &[x, g, b],
        &[true, true, true],
        &|t, v| t.instance_norm(v[0], v[1], v[2], 1e-5),
        rng,
    )?);
    let x = n(rng, &[3, 2, 4]);
    out.push(check_op("spatial_mean", &[x], &[true], &|t, v| t.spatial_mean(v[0]), rng)?);

    let sys = Tensor::from_fn(&[5, 5], |i| if i % 6 == 0 { 3.0 } else { 0.0 });
    let noise = n(rng, &[5, 5]);
    let a: Vec<f64> = sys.data().iter().zip(noise.data()).map(|(s, e)| s + 0.5 * e).collect();
    let lu = Arc::new(LuFactors::factor(&a, 5)?);
    let rhs = n(rng, &[5, 2]);
    out.push(check_op("solve", &[rhs], &[true], &|t, v| t.solve(&lu, v[0]), rng)?);

    Ok(out)
}
