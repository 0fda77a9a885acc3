use spdn_tensor::check::op_gradient_suite;
use spdn_tensor::{Tape, Tensor, TensorError};

#[test]
fn every_op_matches_finite_differences_over_20_seeds() {
    for seed in 0..20 {
        for check in op_gradient_suite(seed).unwrap() {
            assert!(check.rel_error < 1e-4, "seed {seed}: {} rel error {:e}", check.name, check.rel_error);
        }
    }
}

#[test]
fn sum_gradient_is_ones() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![0.3, -2.0, 5.0]));
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
}

#[test]
fn square_gradient_is_twice_x() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(1.75));
    let y = tape.mul(x, x).unwrap();
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[3.5]);
}

#[test]
fn backward_rejects_non_scalar_and_reuse() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(tape.backward(x), Err(TensorError::Usage(_))));
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert!(matches!(tape.backward(s), Err(TensorError::Usage(_))));
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    let c = tape.constant(Tensor::vector(vec![3.0, 4.0]));
    let y = tape.mul(x, c).unwrap();
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[3.0, 4.0]);
    assert!(tape.grad(c).is_none());
}
