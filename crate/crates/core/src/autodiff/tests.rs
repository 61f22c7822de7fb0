use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    // keep entries away from the LeakyReLU kink so differences stay smooth
    let mut t = Tensor::uniform(shape, 1.0, rng);
    for v in t.values_mut() {
        if v.abs() < 0.05 {
            *v += 0.1_f64.copysign(*v);
        }
    }
    t
}

/// Checks every input of `build` against central differences of
/// `sum(build(inputs) ⊙ probe)`.
fn check_op(seed: u64, inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval = |inputs: &[Tensor], probe: Option<&Tensor>| -> (f64, Tensor) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
        let out = build(&mut tape, &vars);
        let out_val = tape.value(out).clone();
        let loss = match probe {
            Some(p) => out_val.values().iter().zip(p.values()).map(|(a, b)| a * b).sum(),
            None => 0.0,
        };
        (loss, out_val)
    };
    let (_, out) = eval(&inputs, None);
    let probe = Tensor::uniform(out.shape(), 1.0, &mut rng);

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let p = tape.constant(probe.clone());
    let weighted = tape.mul(out, p).unwrap();
    let loss = tape.sum(weighted);
    tape.backward(loss).unwrap();

    let gc = GradCheck::default();
    for (k, var) in vars.iter().enumerate() {
        let analytic = tape.grad(*var).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        for i in 0..inputs[k].len() {
            let mut work = inputs.clone();
            let mut vals = work[k].values().to_vec();
            let numeric = gc.numeric(&mut vals, i, |v| {
                work[k].values_mut().copy_from_slice(v);
                eval(&work, Some(&probe)).0
            });
            let err = gc.relative_error(analytic[i], numeric);
            assert!(
                err <= gc.rel_tol,
                "input {k} entry {i}: analytic {} numeric {numeric} (rel {err})",
                analytic[i]
            );
        }
    }
}

#[test]
fn matmul_identity() {
    let mut tape = Tape::new();
    let i3 = tape.constant(Tensor::identity(3));
    let x = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let y = tape.matmul(i3, x).unwrap();
    assert_eq!(tape.value(y).values(), &[1.0, 2.0, 3.0]);
    assert_eq!(tape.value(y).shape(), &[3]);
}

#[test]
fn tanh_and_leaky_examples() {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::vector(vec![0.0]));
    let t = tape.tanh(z);
    assert_eq!(tape.value(t).values(), &[0.0]);
    let x = tape.constant(Tensor::vector(vec![-1.0, 2.0]));
    let l = tape.leaky_relu(x, 0.01);
    assert_eq!(tape.value(l).values(), &[-0.01, 2.0]);
}

#[test]
fn quadratic_gradient() {
    let mut tape = Tape::new();
    let w = tape.variable(Tensor::vector(vec![1.0, 2.0]));
    let sq = tape.mul(w, w).unwrap();
    let loss = tape.sum(sq);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(w).unwrap(), &[2.0, 4.0]);
}

#[test]
fn unreachable_parameter_gets_zero_grad() {
    let mut store = ParameterStore::new();
    let a = store.insert("a", Tensor::vector(vec![3.0])).unwrap();
    store.insert("unused", Tensor::vector(vec![1.0, 1.0])).unwrap();
    let mut tape = Tape::new();
    let p = tape.bind(&store, true);
    let sq = tape.square(p.var(a));
    let loss = tape.sum(sq);
    tape.backward(loss).unwrap();
    let grads = tape.parameter_gradients().unwrap();
    assert_eq!(grads.iter().collect::<Vec<_>>(), vec![&[6.0][..], &[0.0, 0.0][..]]);
}

#[test]
fn backward_twice_is_an_error() {
    let mut tape = Tape::new();
    let w = tape.variable(Tensor::vector(vec![1.0]));
    let loss = tape.sum(w);
    tape.backward(loss).unwrap();
    assert!(matches!(tape.backward(loss), Err(AutodiffError::BackwardTwice)));
}

#[test]
fn non_scalar_loss_rejected() {
    let mut tape = Tape::new();
    let w = tape.variable(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(tape.backward(w), Err(AutodiffError::NonScalarLoss(_))));
}

#[test]
fn shape_mismatch_names_op() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    let c = tape.constant(Tensor::zeros(&[3, 2]));
    assert!(tape.add(a, c).is_err());
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_tensor(&mut rng, &[4, 5]);
    let b = rand_tensor(&mut rng, &[5, 3]);
    let run = || {
        let mut tape = Tape::new();
        let (x, y) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let z = tape.matmul(x, y).unwrap();
        let z = tape.tanh(z);
        tape.value(z).clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn gradients_of_every_primitive_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..5u64 {
        let s = trial * 100;
        let m = rng.gen_range(1..4);
        let k = rng.gen_range(1..4);
        let n = rng.gen_range(2..5);
        let mut r = || ChaCha8Rng::seed_from_u64(rng.gen());
        check_op(s, vec![rand_tensor(&mut r(), &[m, k]), rand_tensor(&mut r(), &[k, n])], |t, v| t.matmul(v[0], v[1]).unwrap());
        check_op(s + 1, vec![rand_tensor(&mut r(), &[m, n]), rand_tensor(&mut r(), &[m, n])], |t, v| t.add(v[0], v[1]).unwrap());
        check_op(s + 2, vec![rand_tensor(&mut r(), &[m, n]), rand_tensor(&mut r(), &[m, n])], |t, v| t.sub(v[0], v[1]).unwrap());
        check_op(s + 3, vec![rand_tensor(&mut r(), &[m, n]), rand_tensor(&mut r(), &[m, n])], |t, v| t.mul(v[0], v[1]).unwrap());
        check_op(s + 4, vec![rand_tensor(&mut r(), &[m, n]), rand_tensor(&mut r(), &[n])], |t, v| t.add_row(v[0], v[1]).unwrap());
        check_op(s + 5, vec![rand_tensor(&mut r(), &[m, n]), rand_tensor(&mut r(), &[m, 1])], |t, v| t.add_col(v[0], v[1]).unwrap());
        check_op(s + 6, vec![rand_tensor(&mut r(), &[m, n])], |t, v| t.scale(v[0], -1.7));
        check_op(s + 7, vec![rand_tensor(&mut r(), &[m, n])], |t, v| t.tanh(v[0]));
        check_op(s + 8, vec![rand_tensor(&mut r(), &[m, n])], |t, v| t.sigmoid(v[0]));
        check_op(s + 9, vec![rand_tensor(&mut r(), &[m, n])], |t, v| t.leaky_relu(v[0], 0.01));
        check_op(s + 10, vec![rand_tensor(&mut r(), &[m, n])], |t, v| t.square(v[0]));
        check_op(s + 11, vec![rand_tensor(&mut r(), &[m, n])], |t, v| t.softmax_rows(v[0]));
        check_op(s + 12, vec![rand_tensor(&mut r(), &[m, n])], |t, v| t.sum(v[0]));
        check_op(s + 13, vec![rand_tensor(&mut r(), &[m, n])], |t, v| t.mean(v[0]));
        for axis in 0..2 {
            for mean in [false, true] {
                check_op(s + 14, vec![rand_tensor(&mut r(), &[m, n])], move |t, v| t.reduce_axis(v[0], axis, mean).unwrap());
            }
        }
        check_op(s + 15, vec![rand_tensor(&mut r(), &[m, n]), rand_tensor(&mut r(), &[m, k])], |t, v| t.concat_cols(&[v[0], v[1]]).unwrap());
        check_op(s + 16, vec![rand_tensor(&mut r(), &[m, n])], move |t, v| t.slice_cols(v[0], 1, n).unwrap());
        let idx: Vec<usize> = (0..m).map(|i| (i * 7) % n).collect();
        check_op(s + 17, vec![rand_tensor(&mut r(), &[m, n])], move |t, v| t.gather_cols(v[0], idx.clone()).unwrap());
        let groups: Vec<usize> = (0..m).map(|i| i % 2).collect();
        check_op(s + 18, vec![rand_tensor(&mut r(), &[m, n])], move |t, v| t.sum_row_groups(v[0], groups.clone(), 2).unwrap());
    }
}

fn random_incidence(rng: &mut ChaCha8Rng, nodes: usize, relations: usize) -> Rc<Incidence> {
    let mut arcs = Vec::new();
    for s in 0..nodes {
        for t in 0..nodes {
            if s != t && rng.gen_bool(0.5) {
                arcs.push((s, t, rng.gen_range(0..relations)));
            }
        }
    }
    Rc::new(Incidence::from_arcs(nodes, relations, &arcs))
}

#[test]
fn graph_kernels_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..5u64 {
        let nodes = rng.gen_range(2..6);
        let relations = rng.gen_range(1..5);
        let bases = 2;
        let d = 3;
        let inc = random_incidence(&mut rng, nodes, relations);
        let inputs = vec![
            rand_tensor(&mut rng, &[nodes, d]),
            rand_tensor(&mut rng, &[nodes, d]),
            rand_tensor(&mut rng, &[relations, bases]),
        ];
        let i2 = inc.clone();
        check_op(trial, inputs, move |t, v| t.relational_aggregate(&[v[0], v[1]], v[2], i2.clone()).unwrap());
        let inputs = vec![
            rand_tensor(&mut rng, &[nodes, d]),
            rand_tensor(&mut rng, &[nodes, 1]),
            rand_tensor(&mut rng, &[nodes, 1]),
        ];
        check_op(trial + 50, inputs, move |t, v| t.graph_attention(v[0], v[1], v[2], inc.clone(), 0.2).unwrap());
    }
}

#[test]
fn incidence_normalizes_per_relation() {
    let inc = Incidence::from_arcs(3, 2, &[(0, 2, 1), (1, 2, 1), (0, 1, 0)]);
    let into2: Vec<_> = inc.incoming(2).collect();
    assert_eq!(into2, vec![(0, 1, 0.5), (1, 1, 0.5)]);
    assert_eq!(inc.incoming(1).collect::<Vec<_>>(), vec![(0, 0, 1.0)]);
    assert_eq!(inc.in_degree(0), 0);
}
