use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Reduce an arbitrary-shaped node to a scalar with fixed random weights so
/// every output coordinate contributes a distinct amount.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var, NumericsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.value(y).shape().to_vec();
    let w = tape.constant(rand_tensor(&mut rng, &shape, -1.0, 1.0));
    let prod = tape.mul(y, w)?;
    Ok(tape.sum(prod))
}

type OpCase = (&'static str, Vec<usize>, (f64, f64), fn(&mut Tape, Var) -> Result<Var, NumericsError>);

fn op_cases() -> Vec<OpCase> {
    vec![
        ("matmul", vec![3, 4], (-1.0, 1.0), |t, x| {
            let b = t.constant(Tensor::matrix(4, 2, vec![0.3, -0.2, 0.5, 0.1, -0.7, 0.4, 0.2, 0.9]));
            t.matmul(x, b)
        }),
        ("matmul_rhs", vec![4, 2], (-1.0, 1.0), |t, x| {
            let a = t.constant(Tensor::matrix(2, 4, vec![0.3, -0.2, 0.5, 0.1, -0.7, 0.4, 0.2, 0.9]));
            t.matmul(a, x)
        }),
        ("matvec", vec![4], (-1.0, 1.0), |t, x| {
            let a = t.constant(Tensor::matrix(2, 4, vec![0.3, -0.2, 0.5, 0.1, -0.7, 0.4, 0.2, 0.9]));
            t.matmul(a, x)
        }),
        ("transpose", vec![2, 3], (-1.0, 1.0), |t, x| t.transpose(x)),
        ("add_broadcast", vec![3], (-1.0, 1.0), |t, x| {
            let a = t.constant(Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]));
            let s = t.add(a, x)?;
            t.mul(s, s)
        }),
        ("sub", vec![2, 3], (-1.0, 1.0), |t, x| {
            let a = t.constant(Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]));
            let d = t.sub(a, x)?;
            t.mul(d, d)
        }),
        ("mul_self", vec![5], (-2.0, 2.0), |t, x| t.mul(x, x)),
        ("mul_broadcast", vec![3], (-1.0, 1.0), |t, x| {
            let a = t.constant(Tensor::matrix(2, 3, vec![1., -2., 3., 0.4, 5., -6.]));
            t.mul(a, x)
        }),
        ("scale", vec![4], (-1.0, 1.0), |t, x| Ok(t.scale(x, -2.5))),
        ("expit", vec![6], (-4.0, 4.0), |t, x| Ok(t.expit(x))),
        ("tanh", vec![6], (-3.0, 3.0), |t, x| Ok(t.tanh(x))),
        ("log", vec![6], (0.2, 3.0), |t, x| Ok(t.log(x))),
        ("exp", vec![6], (-2.0, 2.0), |t, x| Ok(t.exp(x))),
        ("relu", vec![6], (0.05, 2.0), |t, x| {
            let s = t.shift(x, -1.0);
            let r = t.relu(s);
            t.mul(r, x)
        }),
        ("clamp", vec![6], (0.1, 0.9), |t, x| Ok(t.clamp(x, 1e-7, 1.0 - 1e-7))),
        ("sum", vec![2, 3], (-1.0, 1.0), |t, x| {
            let sq = t.mul(x, x)?;
            Ok(t.sum(sq))
        }),
        ("mean", vec![2, 3], (-1.0, 1.0), |t, x| {
            let sq = t.mul(x, x)?;
            Ok(t.mean(sq))
        }),
        ("mean_axis0", vec![3, 2], (-1.0, 1.0), |t, x| {
            let e = t.exp(x);
            t.mean_axis(e, 0)
        }),
        ("mean_axis1", vec![3, 2], (-1.0, 1.0), |t, x| {
            let e = t.exp(x);
            t.mean_axis(e, 1)
        }),
        ("softmax", vec![5], (-2.0, 2.0), |t, x| t.softmax(x, 0)),
        ("softmax_axis0", vec![3, 4], (-2.0, 2.0), |t, x| t.softmax(x, 0)),
        ("softmax_axis1", vec![3, 4], (-2.0, 2.0), |t, x| t.softmax(x, 1)),
        ("l2_norm", vec![4], (0.1, 1.0), |t, x| t.l2_norm(x)),
        ("l2_norm_rows", vec![3, 2], (0.1, 1.0), |t, x| t.l2_norm(x)),
        ("concat0", vec![2, 2], (-1.0, 1.0), |t, x| {
            let e = t.exp(x);
            t.concat(&[x, e], 0)
        }),
        ("concat1", vec![2, 2], (-1.0, 1.0), |t, x| {
            let e = t.exp(x);
            t.concat(&[e, x, e], 1)
        }),
        ("slice_rows", vec![4, 2], (-1.0, 1.0), |t, x| {
            let a = t.slice_rows(x, 1, 3)?;
            let b = t.slice_rows(x, 0, 2)?;
            let d = t.sub(a, b)?;
            t.mul(d, d)
        }),
        ("scale_rows", vec![3], (-1.0, 1.0), |t, x| {
            let m = t.constant(Tensor::matrix(3, 2, vec![1., 2., -3., 4., 0.5, 6.]));
            let y = t.scale_rows(m, x)?;
            t.mul(y, y)
        }),
        ("tile_rows", vec![3], (-1.0, 1.0), |t, x| {
            let y = t.tile_rows(x, 4)?;
            Ok(t.expit(y))
        }),
        ("pairwise_dist", vec![3, 2], (-1.0, 1.0), |t, x| {
            let b = t.constant(Tensor::matrix(2, 2, vec![2.0, 2.0, -2.0, 1.5]));
            t.pairwise_dist(x, b)
        }),
        ("gru_input", vec![3, 2], (-1.0, 1.0), |t, x| {
            let (w, u, bi, bh) = gru_weights(t, 2, 3);
            t.gru(x, w, u, bi, bh, false)
        }),
        ("gru_input_reverse", vec![3, 2], (-1.0, 1.0), |t, x| {
            let (w, u, bi, bh) = gru_weights(t, 2, 3);
            t.gru(x, w, u, bi, bh, true)
        }),
        ("gru_w_hh", vec![9, 3], (-0.8, 0.8), |t, u| {
            let x = t.constant(Tensor::matrix(4, 2, vec![0.5, -1.0, 0.3, 0.8, -0.2, 0.1, 0.9, -0.6]));
            let w = t.constant(Tensor::matrix(9, 2, (0..18).map(|i| ((i * 7 % 11) as f64 - 5.0) / 6.0).collect()));
            let bi = t.constant(Tensor::vector((0..9).map(|i| 0.1 * i as f64 - 0.4).collect()));
            let bh = t.constant(Tensor::vector((0..9).map(|i| 0.05 * i as f64).collect()));
            t.gru(x, w, u, bi, bh, true)
        }),
    ]
}

fn gru_weights(t: &mut Tape, input: usize, hidden: usize) -> (Var, Var, Var, Var) {
    let w = t.constant(Tensor::matrix(
        3 * hidden,
        input,
        (0..3 * hidden * input).map(|i| ((i * 5 % 13) as f64 - 6.0) / 8.0).collect(),
    ));
    let u = t.constant(Tensor::matrix(
        3 * hidden,
        hidden,
        (0..3 * hidden * hidden).map(|i| ((i * 3 % 7) as f64 - 3.0) / 5.0).collect(),
    ));
    let bi = t.constant(Tensor::vector((0..3 * hidden).map(|i| 0.1 * i as f64 - 0.3).collect()));
    let bh = t.constant(Tensor::vector((0..3 * hidden).map(|i| 0.2 - 0.05 * i as f64).collect()));
    (w, u, bi, bh)
}

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (name, shape, (lo, hi), op) in op_cases() {
        for point in 0..100 {
            let theta = rand_tensor(&mut rng, &shape, lo, hi);
            let seed = point as u64;
            let err = grad_check(
                |t, x| {
                    let y = op(t, x)?;
                    weighted_sum(t, y, seed)
                },
                &theta,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-4, "{name} at point {point}: rel err {err}");
        }
    }
}

#[test]
fn forward_examples() {
    let mut t = Tape::new();
    let z = t.constant(Tensor::scalar(0.0));
    let e = t.expit(z);
    assert_eq!(t.scalar(e), 0.5);

    let v = t.constant(Tensor::vector(vec![0.0; 3]));
    let s = t.softmax(v, 0).unwrap();
    for &x in t.value(s).data() {
        assert!((x - 1.0 / 3.0).abs() < 1e-15);
    }

    let id = t.constant(Tensor::identity(3));
    let v = t.constant(Tensor::vector(vec![1.5, -2.0, 7.25]));
    let out = t.matmul(id, v).unwrap();
    assert_eq!(t.value(out).data(), &[1.5, -2.0, 7.25]);
}

#[test]
fn backward_examples() {
    let mut t = Tape::new();
    let x = t.param(Tensor::scalar(3.0));
    let y = t.mul(x, x).unwrap();
    let g = t.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap().item(), 6.0);

    let mut t = Tape::new();
    let x = t.param(Tensor::scalar(0.0));
    let y = t.expit(x);
    assert_eq!(t.backward(y).unwrap().get(x).unwrap().item(), 0.25);

    let mut t = Tape::new();
    let v = t.param(Tensor::vector(vec![0.3, -1.2, 2.0, 0.0]));
    let s = t.softmax(v, 0).unwrap();
    let total = t.sum(s);
    let g = t.backward(total).unwrap();
    for &d in g.get(v).unwrap().data() {
        assert!(d.abs() < 1e-15);
    }
}

#[test]
fn backward_is_idempotent() {
    let mut t = Tape::new();
    let x = t.param(Tensor::vector(vec![0.4, -0.3]));
    let e = t.exp(x);
    let y = t.sum(e);
    let g1 = t.backward(y).unwrap().get(x).cloned();
    let g2 = t.backward(y).unwrap().get(x).cloned();
    assert_eq!(g1, g2);
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut t = Tape::new();
    let x = t.param(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(
        t.backward(x),
        Err(NumericsError::NonScalarRoot { .. })
    ));
}

#[test]
fn shape_errors_name_the_op() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros(&[2, 3]));
    let b = t.constant(Tensor::zeros(&[2, 3]));
    let err = t.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        NumericsError::ShapeMismatch {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![2, 3]
        }
    );
    assert!(err.to_string().contains("matmul"));
    let c = t.constant(Tensor::zeros(&[2]));
    assert!(t.add(a, c).is_err());
}

#[test]
fn relu_subgradient_at_zero_is_zero() {
    let mut t = Tape::new();
    let x = t.param(Tensor::vector(vec![0.0, 1.0, -1.0]));
    let r = t.relu(x);
    let s = t.sum(r);
    assert_eq!(t.backward(s).unwrap().get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
}

#[test]
fn softmax_is_a_simplex_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let mut t = Tape::new();
        let v = t.constant(rand_tensor(&mut rng, &[7], -20.0, 20.0));
        let s = t.softmax(v, 0).unwrap();
        let vals = t.value(s).data();
        assert!((vals.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(vals.iter().all(|&x| x > 0.0 && x < 1.0));
    }
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(3, 2, vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]));
        let (w, u, bi, bh) = gru_weights(&mut t, 2, 4);
        let h = t.gru(x, w, u, bi, bh, false).unwrap();
        t.value(h).clone()
    };
    let (a, b) = (run(), run());
    assert_eq!(
        a.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        b.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn grad_check_examples() {
    let err = grad_check(|t, x| t.mul(x, x).map(|y| t.sum(y)), &Tensor::scalar(2.0), 1e-5).unwrap();
    assert!(err < 1e-6);

    // negative control: wrong hand-coded derivative of x^2
    let theta = Tensor::vector(vec![2.0, -1.0]);
    let err = grad_check_with(
        |t| Ok(t.data().iter().map(|x| x * x).sum()),
        |t| Ok(t.map(|x| 3.0 * x)),
        &theta,
        1e-5,
    )
    .unwrap();
    assert!(err > 1e-2);
}

#[test]
fn grad_check_rejects_bad_inputs() {
    let theta = Tensor::scalar(1.0);
    assert!(grad_check(|t, x| Ok(t.log(x)), &theta, 0.5).is_err());
    let err = grad_check_with(|_| Ok(f64::NAN), |t| Ok(t.clone()), &theta, 1e-5).unwrap_err();
    assert!(matches!(err, NumericsError::NonFinite(_)));
}
