use lookahead::numeric::{check_gradients, Tape, Tensor, TensorError, Var};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_t(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn(shape, 1.0, &mut rng)
}

type LossFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>>;

/// Every differentiable op, each reduced to a scalar through a fixed
/// random projection so gradients are non-trivial.
fn op_cases(seed: u64) -> Vec<(&'static str, Vec<Tensor>, LossFn)> {
    let proj = move |tape: &mut Tape, v: Var| -> Result<Var, TensorError> {
        let shape = tape.value(v).shape().to_vec();
        let w = tape.constant(rand_t(&shape, seed ^ 0xabc));
        let p = tape.mul(v, w)?;
        tape.sum(p)
    };
    let mut cases: Vec<(&'static str, Vec<Tensor>, LossFn)> = Vec::new();
    cases.push((
        "matmul",
        vec![rand_t(&[3, 4], seed), rand_t(&[4, 5], seed + 1)],
        Box::new(move |t, v| {
            let y = t.matmul(v[0], v[1])?;
            proj(t, y)
        }),
    ));
    cases.push((
        "matmul_nt",
        vec![rand_t(&[3, 4], seed), rand_t(&[5, 4], seed + 1)],
        Box::new(move |t, v| {
            let y = t.matmul_nt(v[0], v[1])?;
            proj(t, y)
        }),
    ));
    cases.push((
        "matmul_tn",
        vec![rand_t(&[4, 3], seed), rand_t(&[4, 5], seed + 1)],
        Box::new(move |t, v| {
            let y = t.matmul_tn(v[0], v[1])?;
            proj(t, y)
        }),
    ));
    cases.push((
        "broadcast_add_mul_sub",
        vec![rand_t(&[4, 3], seed), rand_t(&[3], seed + 1), rand_t(&[4, 1], seed + 2)],
        Box::new(move |t, v| {
            let a = t.add(v[0], v[1])?;
            let b = t.mul(a, v[2])?;
            let c = t.sub(b, v[1])?;
            proj(t, c)
        }),
    ));
    cases.push((
        "unary_chain",
        vec![rand_t(&[3, 3], seed)],
        Box::new(move |t, v| {
            let a = t.gelu(v[0])?;
            let b = t.tanh(a)?;
            let c = t.sigmoid(b)?;
            let d = t.exp(c)?;
            let e = t.log(d)?;
            let f = t.neg(e)?;
            let g = t.scale(f, 1.7)?;
            let h = t.add_scalar(g, 0.3)?;
            proj(t, h)
        }),
    ));
    cases.push((
        "relu",
        // keep entries away from the kink
        vec![Tensor::new(&[2, 3], vec![0.5, -0.7, 1.2, -1.1, 0.9, -0.2]).unwrap()],
        Box::new(move |t, v| {
            let a = t.relu(v[0])?;
            proj(t, a)
        }),
    ));
    cases.push((
        "masked_softmax",
        vec![rand_t(&[3, 4], seed)],
        Box::new(move |t, v| {
            let mask = [true, false, true, true, true, true, false, false, false, true, true, true];
            let a = t.softmax_rows(v[0], Some(&mask))?;
            proj(t, a)
        }),
    ));
    cases.push((
        "log_softmax",
        vec![rand_t(&[3, 5], seed)],
        Box::new(move |t, v| {
            let a = t.log_softmax_rows(v[0])?;
            proj(t, a)
        }),
    ));
    cases.push((
        "masked_fill",
        vec![rand_t(&[2, 3], seed)],
        Box::new(move |t, v| {
            let a = t.masked_fill(v[0], &[false, true, false, false, false, true], -3.0)?;
            proj(t, a)
        }),
    ));
    cases.push((
        "layer_norm",
        vec![rand_t(&[4, 6], seed), rand_t(&[6], seed + 1), rand_t(&[6], seed + 2)],
        Box::new(move |t, v| {
            let a = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
            proj(t, a)
        }),
    ));
    cases.push((
        "gather_concat_slice",
        vec![rand_t(&[5, 3], seed), rand_t(&[2, 3], seed + 1)],
        Box::new(move |t, v| {
            let a = t.gather_rows(v[0], &[4, 1, 1, 0])?;
            let b = t.concat_rows(&[a, v[1]])?;
            let c = t.slice_rows(b, 1, 4)?;
            let d = t.slice_cols(c, 1, 2)?;
            let e = t.concat_cols(&[d, c])?;
            let f = t.transpose(e)?;
            let g = t.reshape(f, &[4, 5])?;
            proj(t, g)
        }),
    ));
    cases.push((
        "cross_entropy",
        vec![rand_t(&[4, 6], seed)],
        Box::new(move |t, v| t.cross_entropy(v[0], &[0, 5, 2, 2])),
    ));
    cases.push((
        "bce_sigmoid",
        vec![rand_t(&[5], seed)],
        Box::new(move |t, v| {
            let p = t.sigmoid(v[0])?;
            t.bce(p, &[1.0, 0.0, 0.3, 1.0, 0.0])
        }),
    ));
    cases.push((
        "mean_log_mean_exp",
        vec![rand_t(&[3, 4], seed), rand_t(&[3, 4], seed + 1)],
        Box::new(move |t, v| {
            let a = t.mean(v[0])?;
            let b = t.log_mean_exp(v[1])?;
            t.sub(a, b)
        }),
    ));
    cases
}

#[test]
fn every_op_matches_finite_differences() {
    for seed in 0..4 {
        for (name, params, f) in op_cases(seed) {
            let err = check_gradients(f, &params, 1e-5).unwrap();
            assert!(err < 1e-4, "{name} seed {seed}: rel err {err}");
        }
    }
}

#[test]
fn matmul_identity() {
    let mut t = Tape::new();
    let a = rand_t(&[2, 2], 3);
    let i = t.constant(Tensor::eye(2));
    let av = t.constant(a.clone());
    let y = t.matmul(i, av).unwrap();
    assert_eq!(t.value(y), &a);
}

#[test]
fn softmax_symmetric_and_shift_invariant() {
    let mut t = Tape::new();
    let z = t.constant(Tensor::zeros(&[3]));
    let s = t.softmax_rows(z, None).unwrap();
    for &p in t.value(s).data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = rand_t(&[4, 7], 9);
    let xv = t.constant(x.clone());
    let shifted = t.add_scalar(xv, 123.456).unwrap();
    let a = t.softmax_rows(xv, None).unwrap();
    let b = t.softmax_rows(shifted, None).unwrap();
    for (p, q) in t.value(a).data().iter().zip(t.value(b).data()) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn fully_masked_softmax_row_is_rejected() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::zeros(&[2, 2]));
    let err = t.softmax_rows(x, Some(&[true, false, false, false])).unwrap_err();
    assert!(matches!(err, TensorError::Contract(_)));
}

#[test]
fn backward_linear_and_quadratic() {
    let w = rand_t(&[3, 2], 4);
    let mut t = Tape::new();
    let wv = t.leaf(w.clone(), true);
    let s = t.sum(wv).unwrap();
    t.backward(s).unwrap();
    assert!(t.grad(wv).unwrap().iter().all(|&g| g == 1.0));

    let mut t = Tape::new();
    let wv = t.leaf(w.clone(), true);
    let sq = t.mul(wv, wv).unwrap();
    let s = t.sum(sq).unwrap();
    t.backward(s).unwrap();
    for (g, x) in t.grad(wv).unwrap().iter().zip(w.data()) {
        assert_eq!(*g, 2.0 * x);
    }
    // accumulation without zero_grad
    t.backward(s).unwrap();
    for (g, x) in t.grad(wv).unwrap().iter().zip(w.data()) {
        assert_eq!(*g, 4.0 * x);
    }
    t.zero_grad();
    assert!(t.grad(wv).is_none());
}

#[test]
fn non_scalar_loss_is_a_contract_error() {
    let mut t = Tape::new();
    let w = t.leaf(Tensor::zeros(&[2]), true);
    assert!(matches!(t.backward(w), Err(TensorError::NonScalarLoss(_))));
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros(&[2, 3]));
    let b = t.constant(Tensor::zeros(&[2, 3]));
    match t.matmul(a, b) {
        Err(TensorError::ShapeMismatch { left, right, .. }) => {
            assert_eq!(left, vec![2, 3]);
            assert_eq!(right, vec![2, 3]);
        }
        other => panic!("expected shape error, got {other:?}"),
    }
    let c = t.constant(Tensor::zeros(&[4]));
    assert!(t.add(a, c).unwrap_err().to_string().contains("[2, 3]"));
}

#[test]
fn non_finite_screening() {
    assert!(Tensor::new(&[2], vec![1.0, f64::NAN]).is_err());
    let mut t = Tape::with_nan_check(true);
    let x = t.constant(Tensor::new(&[1], vec![-1.0]).unwrap());
    assert!(matches!(t.log(x), Err(TensorError::NonFinite { .. })));
    let mut t = Tape::with_nan_check(false);
    let x = t.constant(Tensor::new(&[1], vec![-1.0]).unwrap());
    assert!(t.log(x).is_ok());
}

#[test]
fn gradcheck_quadratic_and_softmax_ce() {
    let w = rand_t(&[6], 11);
    let err = check_gradients(
        |t, v| {
            let sq = t.mul(v[0], v[0])?;
            let s = t.sum(sq)?;
            t.scale(s, 0.5)
        },
        &[w],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-8, "{err}");

    let x = rand_t(&[5, 4], 12);
    let wt = rand_t(&[4, 3], 13);
    let err = check_gradients(
        |t, v| {
            let logits = t.matmul(v[0], v[1])?;
            t.cross_entropy(logits, &[0, 1, 2, 1, 0])
        },
        &[x, wt],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn gradcheck_detects_nondeterminism_and_bad_eps() {
    use std::cell::Cell;
    let calls = Cell::new(0.0);
    let w = rand_t(&[2], 1);
    let res = check_gradients(
        |t, v| {
            calls.set(calls.get() + 1.0);
            let s = t.sum(v[0])?;
            t.add_scalar(s, calls.get())
        },
        &[w.clone()],
        1e-5,
    );
    assert!(matches!(res, Err(TensorError::Determinism { .. })));
    assert!(check_gradients(|t, v| t.sum(v[0]), &[w], 0.1).is_err());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..6, seed in 0u64..1000) {
        let mut t = Tape::new();
        let x = t.constant(rand_t(&[rows, cols], seed));
        let x = t.scale(x, 20.0).unwrap();
        let s = t.softmax_rows(x, None).unwrap();
        for r in 0..rows {
            let sum: f64 = t.value(s).row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_standardizes_rows(rows in 1usize..6, cols in 2usize..7, seed in 0u64..1000) {
        let input = rand_t(&[rows, cols], seed);
        for r in 0..rows {
            let row = input.row(r);
            let m = row.iter().sum::<f64>() / cols as f64;
            prop_assume!(row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / cols as f64 > 1e-3);
        }
        let mut t = Tape::new();
        let x = t.constant(input);
        let g = t.constant(Tensor::filled(&[cols], 1.0));
        let b = t.constant(Tensor::zeros(&[cols]));
        let y = t.layer_norm(x, g, b, 1e-12).unwrap();
        for r in 0..rows {
            let row = t.value(y).row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            prop_assert!(mean.abs() < 1e-10);
            prop_assert!((var - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn random_composite_graph_gradients(seed in 0u64..200) {
        let params = vec![rand_t(&[4, 5], seed), rand_t(&[5, 3], seed + 7), rand_t(&[3], seed + 8)];
        let err = check_gradients(|t, v| {
            let h = t.matmul(v[0], v[1])?;
            let h = t.add(h, v[2])?;
            let h = t.gelu(h)?;
            let s = t.softmax_rows(h, None)?;
            let l = t.log(s)?;
            t.mean(l)
        }, &params, 1e-5).unwrap();
        prop_assert!(err < 1e-4);
    }
}

#[test]
fn ops_are_bit_reproducible() {
    let run = || {
        let mut t = Tape::new();
        let a = t.leaf(rand_t(&[6, 6], 5), true);
        let b = t.leaf(rand_t(&[6, 6], 6), true);
        let c = t.matmul(a, b).unwrap();
        let d = t.softmax_rows(c, None).unwrap();
        let e = t.sum(d).unwrap();
        let l = t.mul(e, e).unwrap();
        t.backward(l).unwrap();
        (t.value(d).clone(), t.grad(a).unwrap().to_vec())
    };
    let (x1, g1) = run();
    let (x2, g2) = run();
    assert_eq!(x1, x2);
    assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));
}
