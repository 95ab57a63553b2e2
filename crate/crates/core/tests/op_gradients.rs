//! Central finite-difference checks for every differentiable tape op.
//!
//! Each case treats a small random tensor as the parameter, runs the op
//! inside a scalar loss, and compares the tape gradient against 64-bit
//! central differences (eps 1e-4, relative tolerance 1e-5).

use csap_core::autograd::{ParamSet, Tape, ValueId};
use csap_core::gradcheck::grad_check;
use csap_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-4;
const TOL: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random::<f64>() - 0.5).unwrap()
}

/// Run the checker with a single parameter tensor threaded through `f`.
fn check_single<F>(seed: u64, shape: Vec<usize>, f: F)
where
    F: Fn(&mut Tape<f64>, ValueId) -> csap_core::Result<ValueId>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    let p = ps.add("x", random(&mut rng, shape)).unwrap();
    let report = grad_check(&mut ps, EPS, |ps, tape| {
        let x = tape.param(ps, p);
        let y = f(tape, x)?;
        tape.mean_all(y)
    })
    .unwrap();
    assert!(
        report.all_below(TOL),
        "max rel error {} exceeds {TOL}",
        report.max_rel_error()
    );
}

/// Same but with two parameters.
fn check_pair<F>(seed: u64, sa: Vec<usize>, sb: Vec<usize>, f: F)
where
    F: Fn(&mut Tape<f64>, ValueId, ValueId) -> csap_core::Result<ValueId>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    let a = ps.add("a", random(&mut rng, sa)).unwrap();
    let b = ps.add("b", random(&mut rng, sb)).unwrap();
    let report = grad_check(&mut ps, EPS, |ps, tape| {
        let aid = tape.param(ps, a);
        let bid = tape.param(ps, b);
        let y = f(tape, aid, bid)?;
        tape.mean_all(y)
    })
    .unwrap();
    assert!(
        report.all_below(TOL),
        "max rel error {} exceeds {TOL}",
        report.max_rel_error()
    );
}

/// A non-constant scalarization so gradients do not collapse to a constant
/// field: mean(y * y).
fn squared_mean(tape: &mut Tape<f64>, y: ValueId) -> csap_core::Result<ValueId> {
    tape.mul(y, y)
}

#[test]
fn grad_add_and_mul() {
    check_pair(1, vec![2, 3], vec![2, 3], |tape, a, b| {
        let s = tape.add(a, b)?;
        let m = tape.mul(s, a)?;
        squared_mean(tape, m)
    });
}

#[test]
fn grad_scale_and_bias() {
    check_pair(2, vec![2, 4], vec![4], |tape, a, b| {
        let s = tape.scale(a, -1.7)?;
        let y = tape.add_bias(s, b)?;
        squared_mean(tape, y)
    });
}

#[test]
fn grad_matmul_plain() {
    check_pair(3, vec![3, 4], vec![4, 2], |tape, a, b| {
        let y = tape.matmul(a, b)?;
        squared_mean(tape, y)
    });
}

#[test]
fn grad_matmul_broadcast_rhs() {
    check_pair(4, vec![2, 3, 4], vec![4, 2], |tape, a, b| {
        let y = tape.matmul(a, b)?;
        squared_mean(tape, y)
    });
}

#[test]
fn grad_matmul_broadcast_lhs() {
    check_pair(5, vec![3, 4], vec![2, 4, 2], |tape, a, b| {
        let y = tape.matmul(a, b)?;
        squared_mean(tape, y)
    });
}

#[test]
fn grad_matmul_batched_4d() {
    check_pair(6, vec![2, 2, 3, 4], vec![2, 2, 4, 2], |tape, a, b| {
        let y = tape.matmul(a, b)?;
        squared_mean(tape, y)
    });
}

#[test]
fn grad_transpose_and_reshape() {
    check_single(7, vec![2, 3, 4], |tape, x| {
        let t = tape.transpose(x, 0, 2)?;
        let r = tape.reshape(t, vec![6, 4])?;
        let t2 = tape.transpose(r, 0, 1)?;
        squared_mean(tape, t2)
    });
}

#[test]
fn grad_softmax_every_axis() {
    for axis in 0..3usize {
        check_single(8 + axis as u64, vec![2, 3, 4], |tape, x| {
            let y = tape.softmax(x, axis)?;
            squared_mean(tape, y)
        });
    }
}

#[test]
fn grad_layer_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut ps = ParamSet::new();
    let x = ps.add("x", random(&mut rng, vec![3, 5])).unwrap();
    let gamma = ps.add("gamma", random(&mut rng, vec![5])).unwrap();
    let beta = ps.add("beta", random(&mut rng, vec![5])).unwrap();
    let report = grad_check(&mut ps, EPS, |ps, tape| {
        let xid = tape.param(ps, x);
        let g = tape.param(ps, gamma);
        let b = tape.param(ps, beta);
        let y = tape.layer_norm(xid, g, b, 1e-5)?;
        let sq = tape.mul(y, y)?;
        tape.mean_all(sq)
    })
    .unwrap();
    assert!(report.all_below(TOL), "{}", report.max_rel_error());
}

#[test]
fn grad_gelu() {
    check_single(12, vec![3, 4], |tape, x| {
        let y = tape.gelu(x)?;
        squared_mean(tape, y)
    });
}

#[test]
fn grad_avg_pool() {
    check_single(13, vec![1, 2, 4, 4], |tape, x| {
        let y = tape.avg_pool2d(x, 2)?;
        squared_mean(tape, y)
    });
}

#[test]
fn grad_adaptive_pool_down_and_up() {
    check_single(14, vec![1, 2, 5, 7], |tape, x| {
        let y = tape.adaptive_avg_pool2d(x, 3, 3)?;
        squared_mean(tape, y)
    });
    check_single(15, vec![1, 2, 3, 3], |tape, x| {
        let y = tape.adaptive_avg_pool2d(x, 5, 4)?;
        squared_mean(tape, y)
    });
}

#[test]
fn grad_bilinear_resize_down_and_up() {
    check_single(16, vec![1, 2, 4, 4], |tape, x| {
        let y = tape.bilinear_resize(x, 3, 5)?;
        squared_mean(tape, y)
    });
    check_single(17, vec![1, 2, 2, 2], |tape, x| {
        let y = tape.bilinear_resize(x, 4, 4)?;
        squared_mean(tape, y)
    });
}

#[test]
fn grad_conv1x1() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let mut ps = ParamSet::new();
    let x = ps.add("x", random(&mut rng, vec![2, 3, 3, 3])).unwrap();
    let w = ps.add("w", random(&mut rng, vec![4, 3])).unwrap();
    let b = ps.add("b", random(&mut rng, vec![4])).unwrap();
    let report = grad_check(&mut ps, EPS, |ps, tape| {
        let xid = tape.param(ps, x);
        let wid = tape.param(ps, w);
        let bid = tape.param(ps, b);
        let y = tape.conv1x1(xid, wid, Some(bid))?;
        let sq = tape.mul(y, y)?;
        tape.mean_all(sq)
    })
    .unwrap();
    assert!(report.all_below(TOL), "{}", report.max_rel_error());
}

#[test]
fn grad_dwconv3x3() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut ps = ParamSet::new();
    let x = ps.add("x", random(&mut rng, vec![2, 2, 4, 4])).unwrap();
    let w = ps.add("w", random(&mut rng, vec![2, 3, 3])).unwrap();
    let b = ps.add("b", random(&mut rng, vec![2])).unwrap();
    let report = grad_check(&mut ps, EPS, |ps, tape| {
        let xid = tape.param(ps, x);
        let wid = tape.param(ps, w);
        let bid = tape.param(ps, b);
        let y = tape.dwconv3x3(xid, wid, Some(bid))?;
        let sq = tape.mul(y, y)?;
        tape.mean_all(sq)
    })
    .unwrap();
    assert!(report.all_below(TOL), "{}", report.max_rel_error());
}

#[test]
fn grad_concat() {
    check_pair(20, vec![2, 2, 3], vec![2, 1, 3], |tape, a, b| {
        let y = tape.concat(&[a, b], 1)?;
        squared_mean(tape, y)
    });
}

#[test]
fn grad_sum_all() {
    check_single(21, vec![4], |tape, x| {
        let sq = tape.mul(x, x)?;
        tape.sum_all(sq)
    });
}

#[test]
fn grad_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut ps = ParamSet::new();
    let logits = ps.add("logits", random(&mut rng, vec![2, 3, 2, 2])).unwrap();
    let labels = vec![0u32, 1, 2, 0, 2, 1, 0, 1];
    let report = grad_check(&mut ps, EPS, |ps, tape| {
        let l = tape.param(ps, logits);
        tape.cross_entropy(l, labels.clone())
    })
    .unwrap();
    assert!(report.all_below(TOL), "{}", report.max_rel_error());
}
