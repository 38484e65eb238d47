use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::sparse::SparseMatrix;

fn m(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

#[test]
fn sigmoid_of_zero_is_half() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::zeros(vec![1, 4]));
    let y = t.sigmoid(x).unwrap();
    assert_eq!(t.value(y).data(), &[0.5; 4]);
}

#[test]
fn layer_norm_of_constant_row_is_zero() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::full(vec![2, 5], 3.25));
    let y = t.layer_norm(x).unwrap();
    assert!(t.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn layer_norm_after_tanh_hand_value() {
    // tanh(±1) = ±0.7615942; mean 0, variance 0.5800257; ±0.7615942/√(0.5800357) = ±0.9999914
    let mut t = Tape::new();
    let x = t.constant(m(&[&[1.0, -1.0]]));
    let h = t.tanh(x).unwrap();
    let y = t.layer_norm(h).unwrap();
    let th = 1f64.tanh();
    let want = th / (th * th + LAYER_NORM_EPS).sqrt();
    assert!((want - 0.99999).abs() < 1e-5);
    assert_close(t.value(y).data(), &[want, -want], 1e-15);
}

#[test]
fn shape_errors() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros(vec![2, 3]));
    let b = t.constant(Tensor::zeros(vec![2, 3]));
    assert!(matches!(t.matmul(a, b, false), Err(Error::Shape(_))));
    assert!(t.matmul(a, b, true).is_ok());
    let c = t.constant(Tensor::zeros(vec![3, 2]));
    assert!(matches!(t.add(a, c), Err(Error::Shape(_))));
    assert!(matches!(t.gather_rows(a, &[2]), Err(Error::Shape(_))));
    let sp = Arc::new(SparseMatrix::identity(3));
    assert!(matches!(t.sparse_matmul(&sp, a), Err(Error::Shape(_))));
}

#[test]
fn non_finite_output_is_rejected() {
    let mut t = Tape::new();
    let x = t.constant(m(&[&[800.0]]));
    assert!(matches!(t.exp(x), Err(Error::Numerics(_))));
    let z = t.constant(m(&[&[0.0]]));
    assert!(matches!(t.log(z), Err(Error::Numerics(_))));
}

#[test]
fn backward_of_sum_is_ones() {
    let mut t = Tape::new();
    let x = t.param(Tensor::full(vec![3, 2], 0.7));
    let s = t.sum(x).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0; 6]);
}

#[test]
fn backward_of_bilinear_form() {
    let mut t = Tape::new();
    let a = t.param(m(&[&[2.0, 3.0]]));
    let b = t.param(m(&[&[5.0, 7.0]]));
    let p = t.mul(a, b).unwrap();
    let s = t.sum(p).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(a).unwrap().data(), &[5.0, 7.0]);
    assert_eq!(g.get(b).unwrap().data(), &[2.0, 3.0]);
}

#[test]
fn backward_of_logsumexp_equal_logits() {
    let mut t = Tape::new();
    let x = t.param(m(&[&[0.0, 0.0]]));
    let l = t.logsumexp_rows(x, None).unwrap();
    let g = t.backward(l).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0.5, 0.5]);
    assert!((t.value(l).item().unwrap() - 2f64.ln()).abs() < 1e-15);
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut t = Tape::new();
    let x = t.param(Tensor::zeros(vec![2, 2]));
    let y = t.tanh(x).unwrap();
    assert!(matches!(t.backward(y), Err(Error::Contract(_))));
}

#[test]
fn gradients_accumulate_across_uses() {
    // sum(x ⊙ x) → 2x
    let mut t = Tape::new();
    let x = t.param(m(&[&[1.0, -2.0, 0.5]]));
    let sq = t.mul(x, x).unwrap();
    let s = t.sum(sq).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[2.0, -4.0, 1.0]);
}

#[test]
fn masked_logsumexp_ignores_masked_entries() {
    let mut t = Tape::new();
    let x = t.param(m(&[&[1.0, 50.0, 2.0], &[3.0, 0.0, 0.0]]));
    let mask = [true, false, true, false, true, false];
    let l = t.logsumexp_rows(x, Some(&mask)).unwrap();
    let v = t.value(l).data().to_vec();
    assert!((v[0] - (1f64.exp() + 2f64.exp()).ln()).abs() < 1e-14);
    assert_eq!(v[1], 0.0);
    let empty = [true, true, true, false, false, false];
    assert!(matches!(t.logsumexp_rows(x, Some(&empty)), Err(Error::Contract(_))));
}

#[test]
fn constant_only_ops_are_not_recorded() {
    let mut t = Tape::new();
    let c = t.constant(Tensor::full(vec![2, 2], 1.0));
    let y = t.tanh(c).unwrap();
    assert_eq!(t.op_kind(y), OpKind::Constant);
    let p = t.param(Tensor::full(vec![2, 2], 1.0));
    let z = t.add(y, p).unwrap();
    assert_eq!(t.op_kind(z), OpKind::Add);
    assert!(t.op_inputs(z).iter().all(|v| v.index() < z.index()));
}

#[test]
fn grad_check_quadratic() {
    let x = m(&[&[1.0, 2.0]]);
    let report = grad_check(
        |t, p| {
            let sq = t.mul(p[0], p[0])?;
            t.sum(sq)
        },
        std::slice::from_ref(&x),
        1e-4,
        1e-8,
        16,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
    let mut t = Tape::new();
    let v = t.param(x);
    let sq = t.mul(v, v).unwrap();
    let s = t.sum(sq).unwrap();
    assert_eq!(t.backward(s).unwrap().get(v).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn grad_check_detects_nondeterminism() {
    use std::cell::Cell;
    let calls = Cell::new(0.0);
    let res = grad_check(
        |t, p| {
            calls.set(calls.get() + 1.0);
            let s = t.sum(p[0])?;
            let bump = t.constant(Tensor::scalar(calls.get())?);
            t.add(s, bump)
        },
        &[m(&[&[1.0]])],
        1e-4,
        1e-6,
        4,
    );
    assert!(matches!(res, Err(Error::Contract(_))));
}

/// Builds a scalar from a unary primitive by pairing its output with a
/// fixed random weight matrix, so every output entry gets a distinct
/// upstream gradient.
fn weighted_sum(t: &mut Tape, y: Var, rng_seed: u64) -> crate::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let shape = t.value(y).shape().to_vec();
    let w = Tensor::new(shape.clone(), (0..shape.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let w = t.constant(w);
    let p = t.mul(y, w)?;
    t.sum(p)
}

#[test]
fn every_primitive_passes_grad_check_on_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sparse = Arc::new(
        SparseMatrix::from_triplets(3, 4, &[(0, 1, 0.5), (0, 3, -1.2), (1, 0, 2.0), (2, 2, 0.3), (2, 3, 0.9)]).unwrap(),
    );
    let mut worst = 0.0f64;
    let mut checks = 0;
    for trial in 0..100u64 {
        let (r, c) = (rng.random_range(1..4), rng.random_range(3..6));
        let a = random(&mut rng, r, c);
        let b = random(&mut rng, r, c);
        let k = random(&mut rng, c, 3);
        let pos = Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(0.2..2.0)).collect()).unwrap();
        let s4 = random(&mut rng, 4, c);
        let mask: Vec<bool> = (0..r * c).map(|i| i % c == 0 || rng.random_bool(0.6)).collect();
        type Case<'a> = (&'a str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> crate::Result<Var> + 'a>);
        let cases: Vec<Case> = vec![
            ("matmul", vec![a.clone(), k.clone()], Box::new(|t, p| t.matmul(p[0], p[1], false))),
            ("matmul_t", vec![a.clone(), b.clone()], Box::new(|t, p| t.matmul(p[0], p[1], true))),
            ("add", vec![a.clone(), b.clone()], Box::new(|t, p| t.add(p[0], p[1]))),
            ("sub", vec![a.clone(), b.clone()], Box::new(|t, p| t.sub(p[0], p[1]))),
            ("mul", vec![a.clone(), b.clone()], Box::new(|t, p| t.mul(p[0], p[1]))),
            ("scale", vec![a.clone()], Box::new(|t, p| t.scale(p[0], -1.7))),
            ("tanh", vec![a.clone()], Box::new(|t, p| t.tanh(p[0]))),
            ("sigmoid", vec![a.clone()], Box::new(|t, p| t.sigmoid(p[0]))),
            ("layer_norm", vec![a.clone()], Box::new(|t, p| t.layer_norm(p[0]))),
            ("exp", vec![a.clone()], Box::new(|t, p| t.exp(p[0]))),
            ("log", vec![pos.clone()], Box::new(|t, p| t.log(p[0]))),
            ("mean_rows", vec![a.clone()], Box::new(|t, p| t.mean_rows(p[0]))),
            ("l2_normalize_rows", vec![a.clone()], Box::new(|t, p| t.l2_normalize_rows(p[0]))),
            ("concat_rows", vec![a.clone(), b.clone()], Box::new(|t, p| t.concat_rows(&[p[0], p[1], p[0]]))),
            ("gather_rows", vec![a.clone()], Box::new(move |t, p| t.gather_rows(p[0], &[r - 1, 0, r - 1]))),
            ("sparse_matmul", vec![s4.clone()], Box::new(|t, p| t.sparse_matmul(&sparse, p[0]))),
            ("logsumexp_rows", vec![a.clone()], Box::new(|t, p| t.logsumexp_rows(p[0], None))),
            ("logsumexp_masked", vec![a.clone()], Box::new(|t, p| t.logsumexp_rows(p[0], Some(&mask)))),
        ];
        for (name, params, f) in cases {
            let report = grad_check(
                |t, p| {
                    let y = f(t, p)?;
                    weighted_sum(t, y, trial)
                },
                &params,
                1e-5,
                1e-5,
                64,
            )
            .unwrap();
            assert!(report.passed(), "{name} trial {trial}: {report:?}");
            worst = worst.max(report.max_rel_error());
            checks += 1;
        }
    }
    assert_eq!(checks, 1800);
    assert!(worst <= 1e-5);
}

#[test]
fn backward_is_linear_in_the_root() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let x = random(&mut rng, 3, 4);
        let (ca, cb) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let build = |t: &mut Tape, x: Var| -> (Var, Var) {
            let l1 = {
                let h = t.tanh(x).unwrap();
                let n = t.layer_norm(h).unwrap();
                weighted_sum(t, n, 1).unwrap()
            };
            let l2 = {
                let n = t.l2_normalize_rows(x).unwrap();
                let l = t.logsumexp_rows(n, None).unwrap();
                t.sum(l).unwrap()
            };
            (l1, l2)
        };
        let grad_of = |which: u8| {
            let mut t = Tape::new();
            let v = t.param(x.clone());
            let (l1, l2) = build(&mut t, v);
            let root = match which {
                1 => l1,
                2 => l2,
                _ => {
                    let a = t.scale(l1, ca).unwrap();
                    let b = t.scale(l2, cb).unwrap();
                    t.add(a, b).unwrap()
                }
            };
            t.backward(root).unwrap().get(v).unwrap().clone()
        };
        let (g1, g2, g) = (grad_of(1), grad_of(2), grad_of(0));
        for k in 0..g.numel() {
            let want = ca * g1.data()[k] + cb * g2.data()[k];
            assert!((g.data()[k] - want).abs() <= 1e-10);
        }
    }
}

#[test]
fn replay_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&mut rng, 5, 6);
    let w = random(&mut rng, 6, 6);
    let run = || {
        let mut t = Tape::new();
        let (xv, wv) = (t.param(x.clone()), t.param(w.clone()));
        let h = t.matmul(xv, wv, false).unwrap();
        let h = t.layer_norm(h).unwrap();
        let n = t.l2_normalize_rows(h).unwrap();
        let s = t.matmul(n, n, true).unwrap();
        let l = t.logsumexp_rows(s, None).unwrap();
        let root = t.sum(l).unwrap();
        let g = t.backward(root).unwrap();
        (g.get(xv).unwrap().clone(), g.get(wv).unwrap().clone())
    };
    let (a, b) = (run(), run());
    assert!(a.0.data().iter().zip(b.0.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(a.1.data().iter().zip(b.1.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}
