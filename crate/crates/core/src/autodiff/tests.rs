use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

use super::*;
use crate::error::{Error, Result};

fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut Pcg64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Contract `y` against fixed random weights so every output coordinate
/// contributes a distinct sensitivity.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = Pcg64::seed_from_u64(seed);
    let w = random(tape.shape(y), -1.0, 1.0, &mut rng);
    let w = tape.constant(w)?;
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

type UnaryCase = (&'static str, fn(&mut Tape<f64>, Var) -> Result<Var>, f64, f64);

#[test]
fn unary_primitives_pass_finite_differences() {
    let cases: Vec<UnaryCase> = vec![
        ("tanh", |t, x| t.tanh(x), -2.0, 2.0),
        ("sigmoid", |t, x| t.sigmoid(x), -2.0, 2.0),
        ("relu", |t, x| t.relu(x), -2.0, 2.0),
        ("softplus", |t, x| t.softplus(x), -2.0, 2.0),
        ("exp", |t, x| t.exp(x), -2.0, 2.0),
        ("log", |t, x| t.log(x), 0.2, 2.0),
        ("square", |t, x| t.square(x), -2.0, 2.0),
        ("softmax", |t, x| t.softmax(x), -2.0, 2.0),
        ("layer_norm", |t, x| t.layer_norm(x, 1e-5), -2.0, 2.0),
        ("scale", |t, x| t.scale(x, -1.7), -2.0, 2.0),
        ("add_scalar", |t, x| t.add_scalar(x, 0.3), -2.0, 2.0),
        ("transpose", |t, x| t.transpose(x), -2.0, 2.0),
        ("reshape", |t, x| t.reshape(x, &[12]), -2.0, 2.0),
        ("slice", |t, x| t.slice(x, 1, 1, 2), -2.0, 2.0),
        ("mean", |t, x| t.mean(x), -2.0, 2.0),
    ];
    let mut rng = Pcg64::seed_from_u64(11);
    for (name, op, lo, hi) in cases {
        for trial in 0..3 {
            let x = random(&[3, 4], lo, hi, &mut rng);
            let err = grad_check(&[x], 1e-5, |t, v| {
                let y = op(t, v[0])?;
                project(t, y, trial)
            })
            .unwrap();
            assert!(err < 1e-4, "{name}: relative error {err}");
        }
    }
}

#[test]
fn binary_primitives_pass_finite_differences() {
    let mut rng = Pcg64::seed_from_u64(12);
    type BinaryCase = (&'static str, fn(&mut Tape<f64>, Var, Var) -> Result<Var>, Vec<usize>, Vec<usize>);
    let cases: Vec<BinaryCase> = vec![
        ("add", |t, a, b| t.add(a, b), vec![3, 4], vec![3, 4]),
        ("add_bias", |t, a, b| t.add(a, b), vec![2, 3, 4], vec![4]),
        ("sub", |t, a, b| t.sub(a, b), vec![3, 4], vec![4]),
        ("mul", |t, a, b| t.mul(a, b), vec![3, 4], vec![3, 4]),
        ("mul_bcast", |t, a, b| t.mul(a, b), vec![3, 4], vec![4]),
        ("div", |t, a, b| t.div(a, b), vec![3, 4], vec![3, 4]),
        ("matmul", |t, a, b| t.matmul(a, b), vec![3, 4], vec![4, 2]),
        ("matmul_shared", |t, a, b| t.matmul(a, b), vec![2, 3, 4], vec![4, 5]),
        ("concat0", |t, a, b| t.concat(&[a, b], 0), vec![2, 4], vec![3, 4]),
        ("concat1", |t, a, b| t.concat(&[a, b], 1), vec![3, 2], vec![3, 4]),
    ];
    for (name, op, sa, sb) in cases {
        let a = random(&sa, -2.0, 2.0, &mut rng);
        // keep divisors away from zero
        let b = if name == "div" {
            random(&sb, 0.5, 2.0, &mut rng)
        } else {
            random(&sb, -2.0, 2.0, &mut rng)
        };
        let err = grad_check(&[a, b], 1e-5, |t, v| {
            let y = op(t, v[0], v[1])?;
            project(t, y, 5)
        })
        .unwrap();
        assert!(err < 1e-4, "{name}: relative error {err}");
    }
    let a = random(&[2, 3, 4], -2.0, 2.0, &mut rng);
    let b = random(&[2, 4, 3], -2.0, 2.0, &mut rng);
    let err = grad_check(&[a, b], 1e-5, |t, v| {
        let y = t.matmul(v[0], v[1])?;
        project(t, y, 6)
    })
    .unwrap();
    assert!(err < 1e-4, "batched matmul: {err}");
}

#[test]
fn gradient_of_sum_is_all_ones() {
    let mut tape = Tape::new();
    let w = tape.variable(Tensor::new(vec![2, 3], vec![0.5; 6]).unwrap()).unwrap();
    let s = tape.sum(w).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.wrt(w).unwrap(), &Tensor::ones(&[2, 3]));
}

#[test]
fn gradient_of_sum_of_squares() {
    let mut tape = Tape::new();
    let w = tape.variable(Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
    let sq = tape.mul(w, w).unwrap();
    let s = tape.sum(sq).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.wrt(w).unwrap().data(), &[2.0, 4.0, 6.0]);
}

#[test]
fn unused_parameters_get_zero_gradients() {
    let mut store = ParamStore::new();
    let used = store.add("used", Tensor::vector(vec![1.0, 2.0]));
    store.add("unused", Tensor::vector(vec![5.0, 5.0, 5.0]));
    let mut tape = Tape::new();
    let u = tape.param(&store, used).unwrap();
    let s = tape.sum(u).unwrap();
    let grads = tape.backward(s).unwrap().for_params(&store);
    assert_eq!(grads[0].data(), &[1.0, 1.0]);
    assert_eq!(grads[1].data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn non_scalar_loss_is_a_contract_error() {
    let mut tape = Tape::new();
    let w = tape.variable(Tensor::vector(vec![1.0, 2.0])).unwrap();
    assert!(matches!(tape.backward(w), Err(Error::Contract(_))));
}

#[test]
fn softplus_of_zero_is_ln2() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::scalar(0.0)).unwrap();
    let y = tape.softplus(x).unwrap();
    assert!((tape.value(y).item() - std::f64::consts::LN_2).abs() < 1e-15);
    assert!((softplus(800.0f64) - 800.0f64).abs() < 1e-12);
    assert!(softplus(-800.0f64) >= 0.0);
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = Pcg64::seed_from_u64(3);
    let mut tape = Tape::new();
    for _ in 0..20 {
        let x = tape.constant(random(&[4, 7], -30.0, 30.0, &mut rng)).unwrap();
        let y = tape.softmax(x).unwrap();
        for row in tape.value(y).rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn shape_mismatch_names_the_op() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = tape.constant(Tensor::zeros(&[3, 3])).unwrap();
    match tape.add(a, b) {
        Err(Error::Shape { op, .. }) => assert_eq!(op, "add"),
        other => panic!("{:?}", other.map(|v| v.index())),
    }
}

#[test]
fn non_finite_forward_is_a_numeric_error() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::vector(vec![0.0, 1.0])).unwrap();
    assert!(matches!(tape.log(a), Err(Error::Numeric { op }) if op == "log"));
}

#[test]
fn replay_is_bit_identical() {
    let mut rng = Pcg64::seed_from_u64(9);
    let x = random(&[4, 3], -2.0, 2.0, &mut rng);
    let w = random(&[3, 2], -2.0, 2.0, &mut rng);
    let run = || {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone()).unwrap();
        let wv = tape.variable(w.clone()).unwrap();
        let h = tape.matmul(xv, wv).unwrap();
        let h = tape.tanh(h).unwrap();
        let l = tape.mean(h).unwrap();
        let g = tape.backward(l).unwrap();
        (tape.value(l).item().to_bits(), g.wrt(wv).unwrap().clone())
    };
    let (l1, g1) = run();
    let (l2, g2) = run();
    assert_eq!(l1, l2);
    assert_eq!(g1, g2);
}

#[test]
fn repeated_param_reads_share_one_node() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::vector(vec![2.0]));
    let mut tape = Tape::new();
    let a = tape.param(&store, id).unwrap();
    let b = tape.param(&store, id).unwrap();
    assert_eq!(a, b);
    let p = tape.mul(a, b).unwrap();
    let g = tape.backward(p).unwrap();
    assert_eq!(g.for_params(&store)[0].data(), &[4.0]);
}
