#![allow(dead_code)]

use bregdiv::divergence::{head_means, moment_matching_grad};
use bregdiv::losses::{batch_objective, DivergenceKind, LossKind};
use bregdiv::nn::{finite_difference, max_relative_error, Activation};
use bregdiv::{deep_bregman, GradientBuffer, deep_bregman_grad, moment_matching, BranchedNet, EmpiricalDist, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 5e-3;
const TOL: f64 = 1e-5;
// Minimum head gap and hinge distance so that ±4·STEP perturbations cannot flip a branch.
const GAP: f64 = 1e-1;

/// Central differences extrapolated twice (Richardson), sixth-order accurate.
/// The high order allows a step large enough to keep roundoff well below the tolerance.
fn richardson<F: Fn(&BranchedNet) -> f64>(net: &BranchedNet, f: F) -> GradientBuffer {
    let level = |a: &GradientBuffer, b: &GradientBuffer, r: f64| {
        // (r·a − b) / (r − 1)
        let mut out = a.clone();
        out.scale(r / (r - 1.0));
        let mut tail = b.clone();
        tail.scale(-1.0 / (r - 1.0));
        out.add_assign(&tail).unwrap();
        out
    };
    let g: Vec<GradientBuffer> = [1.0, 2.0, 4.0].iter().map(|m| finite_difference(net, &f, m * STEP)).collect();
    let d1 = level(&g[0], &g[1], 4.0);
    let d1_coarse = level(&g[1], &g[2], 4.0);
    level(&d1, &d1_coarse, 16.0)
}

fn tanh_net(rng: &mut ChaCha8Rng, k: usize) -> BranchedNet {
    BranchedNet::glorot(&[2, 5, 3], Activation::Tanh, Activation::Tanh, &[3], Activation::Tanh, k, rng).unwrap()
}

fn dist(rng: &mut ChaCha8Rng) -> EmpiricalDist {
    let n = rng.random_range(1..5);
    let pts: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-2.0..2.0)).collect();
    EmpiricalDist::uniform(Tensor::matrix(n, 2, pts).unwrap()).unwrap()
}

fn untied(net: &BranchedNet, items: &[EmpiricalDist]) -> bool {
    items.iter().all(|p| {
        let mut h = head_means(net, p).unwrap();
        h.sort_by(|a, b| b.total_cmp(a));
        h[0] - h[1] > GAP
    })
}

/// Runs `body` until it has produced 100 errors (it returns `None` to reject a draw).
/// Returns the worst error.
fn over_instances(seed: u64, mut body: impl FnMut(&mut ChaCha8Rng) -> Option<f64>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut draws = 0;
    while checked < 100 {
        draws += 1;
        assert!(draws < 100_000, "could not draw enough smooth instances");
        if let Some(err) = body(&mut rng) {
            worst = worst.max(err);
            checked += 1;
        }
    }
    assert!(worst < TOL, "worst relative error {worst}");
    worst
}

pub fn deep_bregman_gradient() -> f64 {
    over_instances(1, |rng| {
        let net = tanh_net(rng, 3);
        let (p, q) = (dist(rng), dist(rng));
        if !untied(&net, &[p.clone(), q.clone()]) {
            return None;
        }
        let g = deep_bregman_grad(&net, &p, &q).unwrap();
        if g.is_zero() {
            return None;
        }
        let fd = richardson(&net, |n: &BranchedNet| deep_bregman(n, &p, &q).unwrap());
        Some(max_relative_error(&g, &fd).unwrap())
    })
}

pub fn moment_matching_gradient() -> f64 {
    over_instances(2, |rng| {
        let net = tanh_net(rng, 2);
        let (p, q) = (dist(rng), dist(rng));
        let g = moment_matching_grad(&net, &p, &q).unwrap();
        let fd = richardson(&net, |n: &BranchedNet| moment_matching(n, &p, &q).unwrap());
        Some(max_relative_error(&g, &fd).unwrap())
    })
}

fn loss_instance(rng: &mut ChaCha8Rng, kind: DivergenceKind, loss: LossKind) -> Option<f64> {
    let net = tanh_net(rng, 3);
    let n = rng.random_range(3..6);
    let items: Vec<EmpiricalDist> = (0..n).map(|_| dist(rng)).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    if kind == DivergenceKind::DeepBregman && !untied(&net, &items) {
        return None;
    }
    let margin = rng.random_range(0.05..0.5);
    let div = |a: &EmpiricalDist, b: &EmpiricalDist| match kind {
        DivergenceKind::DeepBregman => deep_bregman(&net, a, b).unwrap(),
        _ => moment_matching(&net, a, b).unwrap(),
    };
    // Keep every hinge away from its kink.
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if loss == LossKind::Contrastive && labels[i] != labels[j] && (div(&items[i], &items[j]) - margin).abs() < GAP {
                return None;
            }
            if loss == LossKind::Triplet && labels[i] == labels[j] {
                for (t, item) in items.iter().enumerate() {
                    if labels[t] != labels[i] && (div(&items[j], &items[i]) - div(item, &items[i]) + margin).abs() < GAP {
                        return None;
                    }
                }
            }
        }
    }
    let refs: Vec<&EmpiricalDist> = items.iter().collect();
    let obj = batch_objective(&net, kind, &refs, &labels, loss, margin).unwrap();
    if obj.examples == 0 || obj.grads.is_zero() {
        return None;
    }
    let fd = richardson(&net, |m: &BranchedNet| batch_objective(m, kind, &refs, &labels, loss, margin).unwrap().loss);
    Some(max_relative_error(&obj.grads, &fd).unwrap())
}

pub fn contrastive_loss_gradient() -> f64 {
    let mm = over_instances(3, |rng| loss_instance(rng, DivergenceKind::MomentMatching, LossKind::Contrastive));
    mm.max(over_instances(4, |rng| loss_instance(rng, DivergenceKind::DeepBregman, LossKind::Contrastive)))
}

pub fn triplet_loss_gradient() -> f64 {
    let mm = over_instances(5, |rng| loss_instance(rng, DivergenceKind::MomentMatching, LossKind::Triplet));
    mm.max(over_instances(6, |rng| loss_instance(rng, DivergenceKind::DeepBregman, LossKind::Triplet)))
}
