//! Finite-difference checks for every primitive op.

use super::{Arr, Tape, Var};
use ndarray::IxDyn;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_arr(shape: &[usize], rng: &mut ChaCha8Rng) -> Arr {
    Arr::from_shape_simple_fn(IxDyn(shape), || rng.gen_range(-1.0..1.0))
}

/// Check analytic gradients of a scalar-valued graph against central
/// finite differences on every element of every input.
pub(crate) fn check_grads<F>(inputs: &[Arr], f: F, tol: f64)
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let h = 1e-6;
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|a| tape.leaf(a.clone(), true)).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out);

    for (i, base) in inputs.iter().enumerate() {
        let analytic = grads
            .wrt_or_zeros(vars[i], base.shape())
            .as_standard_layout()
            .to_owned();
        for idx in 0..base.len() {
            let mut plus = inputs.to_vec();
            plus[i].as_slice_mut().unwrap()[idx] += h;
            let mut minus = inputs.to_vec();
            minus[i].as_slice_mut().unwrap()[idx] -= h;
            let eval = |ins: &[Arr]| {
                let mut t = Tape::no_grad();
                let vs: Vec<Var> = ins.iter().map(|a| t.leaf(a.clone(), false)).collect();
                let o = f(&mut t, &vs);
                t.scalar_value(o)
            };
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let an = analytic.as_slice().unwrap()[idx];
            let denom = an.abs().max(fd.abs()).max(1e-4);
            assert!(
                (an - fd).abs() / denom < tol,
                "input {i} element {idx}: analytic {an} vs fd {fd}"
            );
        }
    }
}

#[test]
fn grad_add_sub_mul_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_arr(&[2, 3], &mut rng);
    let b = rand_arr(&[2, 3], &mut rng);
    check_grads(&[a, b], |t, v| {
        let s = t.add(v[0], v[1]);
        let d = t.sub(s, v[1]);
        let m = t.mul(d, v[1]);
        let k = t.scale(m, 1.7);
        t.mean_all(k)
    }, 1e-5);
}

#[test]
fn grad_activations() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_arr(&[3, 4], &mut rng);
    check_grads(&[a.clone()], |t, v| {
        let y = t.leaky_relu(v[0], 0.2);
        t.sum_all(y)
    }, 1e-4);
    check_grads(&[a.clone()], |t, v| {
        let y = t.tanh(v[0]);
        t.mean_all(y)
    }, 1e-5);
    check_grads(&[a.clone()], |t, v| {
        let y = t.square(v[0]);
        t.mean_all(y)
    }, 1e-5);
    check_grads(&[a], |t, v| {
        let y = t.abs(v[0]);
        t.mean_all(y)
    }, 1e-4);
}

#[test]
fn grad_matmul_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_arr(&[3, 4], &mut rng);
    let b = rand_arr(&[4, 2], &mut rng);
    check_grads(&[a.clone(), b], |t, v| {
        let y = t.matmul(v[0], v[1]);
        t.mean_all(y)
    }, 1e-5);
    let x = rand_arr(&[4], &mut rng);
    check_grads(&[a, x.clone()], |t, v| {
        let y = t.matvec(v[0], v[1]);
        t.sum_all(y)
    }, 1e-5);
    let u = rand_arr(&[4], &mut rng);
    check_grads(&[u, x], |t, v| t.dot(v[0], v[1]), 1e-5);
}

#[test]
fn grad_softmax_and_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = rand_arr(&[3, 5], &mut rng);
    let w = rand_arr(&[3, 5], &mut rng);
    check_grads(&[a, w], |t, v| {
        let s = t.softmax_rows(v[0]);
        let tr = t.transpose2(s);
        let tr2 = t.transpose2(v[1]);
        let m = t.mul(tr, tr2);
        t.mean_all(m)
    }, 1e-4);
}

#[test]
fn grad_shape_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = rand_arr(&[2, 3, 2, 2], &mut rng);
    let b = rand_arr(&[2, 1, 2, 2], &mut rng);
    check_grads(&[a.clone(), b], |t, v| {
        let y = t.mul_bcast(v[0], v[1]);
        t.mean_all(y)
    }, 1e-5);
    check_grads(&[a.clone()], |t, v| {
        let y = t.reshape(v[0], &[6, 4]);
        let z = t.narrow(y, 0, 1, 3);
        t.mean_all(z)
    }, 1e-5);
    let c = rand_arr(&[2, 2, 2, 2], &mut rng);
    check_grads(&[a, c], |t, v| {
        let y = t.concat_axis(1, &[v[0], v[1]]);
        let m = t.mean_all(y);
        t.scale(m, 3.0)
    }, 1e-5);
}

#[test]
fn grad_scalar_node_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = rand_arr(&[2, 3], &mut rng);
    let s = rand_arr(&[2, 3], &mut rng);
    check_grads(&[a.clone(), s.clone()], |t, v| {
        let sc = t.mean_all(v[1]);
        let y = t.mul_scalar_node(v[0], sc);
        t.sum_all(y)
    }, 1e-5);
    check_grads(&[a.clone(), s.clone()], |t, v| {
        let sc = t.mean_all(v[1]);
        let sc = t.add_scalar(sc, 2.0); // keep the divisor away from zero
        let y = t.div_scalar_node(v[0], sc);
        t.sum_all(y)
    }, 1e-5);
    check_grads(&[a, s], |t, v| {
        let sc = t.mean_all(v[1]);
        let sc = t.clamp_min_scalar(sc, -10.0);
        let y = t.mul_scalar_node(v[0], sc);
        t.mean_all(y)
    }, 1e-5);
}

#[test]
fn grad_bias_and_upsample() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_arr(&[2, 3, 2, 2], &mut rng);
    let b = rand_arr(&[3], &mut rng);
    check_grads(&[x.clone(), b], |t, v| {
        let y = t.add_bias(v[0], v[1]);
        t.mean_all(y)
    }, 1e-5);
    check_grads(&[x], |t, v| {
        let y = t.upsample_nearest2(v[0]);
        let z = t.square(y);
        t.mean_all(z)
    }, 1e-5);
}

#[test]
fn grad_instance_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_arr(&[2, 3, 3, 3], &mut rng);
    let gamma = rand_arr(&[3], &mut rng);
    let beta = rand_arr(&[3], &mut rng);
    check_grads(&[x, gamma, beta], |t, v| {
        let y = t.instance_norm(v[0], v[1], v[2], 1e-5);
        let z = t.square(y);
        t.mean_all(z)
    }, 1e-3);
}

#[test]
fn grad_conv2d() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_arr(&[2, 2, 4, 4], &mut rng);
    let w = rand_arr(&[3, 2, 3, 3], &mut rng);
    check_grads(&[x.clone(), w.clone()], |t, v| {
        let y = t.conv2d(v[0], v[1], 1, 1);
        let z = t.square(y);
        t.mean_all(z)
    }, 1e-4);
    check_grads(&[x, w], |t, v| {
        let y = t.conv2d(v[0], v[1], 2, 1);
        t.mean_all(y)
    }, 1e-4);
}

#[test]
fn backward_accumulates_through_shared_nodes() {
    // y = x*x + x ; dy/dx = 2x + 1
    let mut t = Tape::new();
    let x = t.leaf(Arr::from_elem(IxDyn(&[1]), 3.0), true);
    let sq = t.mul(x, x);
    let y = t.add(sq, x);
    let s = t.sum_all(y);
    let g = t.backward(s);
    assert_eq!(g.wrt(x).unwrap()[[0]], 7.0);
}

#[test]
fn no_grad_tape_records_nothing() {
    let mut t = Tape::no_grad();
    let x = t.leaf(Arr::ones(IxDyn(&[2, 2])), true);
    let y = t.square(x);
    let s = t.sum_all(y);
    assert_eq!(t.scalar_value(s), 4.0);
    let g = t.backward(s);
    assert!(g.wrt(x).is_none());
}

#[test]
fn constants_receive_no_gradient() {
    let mut t = Tape::new();
    let x = t.leaf(Arr::ones(IxDyn(&[2])), true);
    let c = t.constant(Arr::ones(IxDyn(&[2])));
    let y = t.mul(x, c);
    let s = t.sum_all(y);
    let g = t.backward(s);
    assert!(g.wrt(c).is_none());
    assert!(g.wrt(x).is_some());
}
