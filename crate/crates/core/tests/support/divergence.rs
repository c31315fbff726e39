#![allow(dead_code)]

use bregdiv::divergence::{Kernel, Mahalanobis};
use bregdiv::nn::{Activation, DenseLayer, Mlp};
use bregdiv::{
    deep_bregman, deep_euclidean, gaussian_kl, mahalanobis, moment_matching, psd_kernel_divergence, BranchedNet,
    EmpiricalDist, GaussianDist, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_dist(rng: &mut ChaCha8Rng, dim: usize) -> EmpiricalDist {
    let n = rng.random_range(1..6);
    let pts: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    if rng.random_bool(0.5) {
        EmpiricalDist::uniform(Tensor::matrix(n, dim, pts).unwrap()).unwrap()
    } else {
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let w = raw.iter().map(|v| v / s).collect();
        EmpiricalDist::weighted(Tensor::matrix(n, dim, pts).unwrap(), w).unwrap()
    }
}

fn random_net(rng: &mut ChaCha8Rng, dim: usize, k: usize) -> BranchedNet {
    let acts = [Activation::Tanh, Activation::Relu, Activation::LeakyRelu(0.1)];
    let act = acts[rng.random_range(0..acts.len())];
    let hidden = rng.random_range(2..6);
    let head_hidden: Vec<usize> = if rng.random_bool(0.5) { vec![3] } else { vec![] };
    BranchedNet::glorot(&[dim, hidden, 3], act, act, &head_hidden, act, k, rng).unwrap()
}

/// Head outputs of every point, evaluated one point at a time.
fn per_point_heads(net: &BranchedNet, p: &EmpiricalDist) -> Vec<Vec<f64>> {
    (0..p.len())
        .map(|i| net.forward_heads(&Tensor::vector(p.point(i).to_vec()).unwrap()).unwrap())
        .collect()
}

fn first_max(v: &[f64]) -> usize {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    v.iter().position(|x| *x == m).unwrap()
}

fn weighted_heads(net: &BranchedNet, p: &EmpiricalDist) -> Vec<f64> {
    let rows = per_point_heads(net, p);
    let mut m = vec![0.0; net.num_heads()];
    for (r, w) in rows.iter().zip(p.weights()) {
        for (a, v) in m.iter_mut().zip(r) {
            *a += w * v;
        }
    }
    m
}

pub fn worked_two_head_example() {
    let head = |w: f64| Mlp::new(1, vec![DenseLayer::new(1, 1, Activation::Identity, vec![w], vec![0.0]).unwrap()]).unwrap();
    let net = BranchedNet::new(Mlp::identity(1).unwrap(), vec![head(1.0), head(-1.0)]).unwrap();
    let p = EmpiricalDist::dirac(&[2.0]).unwrap();
    let q = EmpiricalDist::dirac(&[-3.0]).unwrap();
    assert_eq!(deep_bregman(&net, &p, &q).unwrap(), 4.0);
    assert_eq!(deep_bregman(&net, &q, &p).unwrap(), 6.0);
}

pub fn axioms_over_ten_thousand_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..10_000 {
        let dim = rng.random_range(1..4);
        let k = rng.random_range(1..5);
        let net = random_net(&mut rng, dim, k);
        let p = random_dist(&mut rng, dim);
        let q = random_dist(&mut rng, dim);

        let d = deep_bregman(&net, &p, &q).unwrap();
        assert!(d >= 0.0, "case {case}: {d}");
        assert_eq!(deep_bregman(&net, &p, &p).unwrap(), 0.0, "case {case}");
        // Independent evaluation from per-point head outputs.
        let hp = weighted_heads(&net, &p);
        let hq = weighted_heads(&net, &q);
        let oracle = hp[first_max(&hp)] - hp[first_max(&hq)];
        assert!((d - oracle.max(0.0)).abs() <= 1e-12 * (1.0 + oracle.abs()), "case {case}: {d} vs {oracle}");

        let single = BranchedNet::new(net.trunk().clone(), vec![net.heads()[0].clone()]).unwrap();
        assert_eq!(deep_bregman(&single, &p, &q).unwrap(), 0.0, "case {case}");

        let mm = moment_matching(&net, &p, &q).unwrap();
        assert_eq!(mm.to_bits(), moment_matching(&net, &q, &p).unwrap().to_bits(), "case {case}");

        let x = Tensor::vector(p.point(0).to_vec()).unwrap();
        let y = Tensor::vector(q.point(0).to_vec()).unwrap();
        let de = deep_euclidean(&net, &x, &y).unwrap();
        let reduced = moment_matching(
            &net,
            &EmpiricalDist::dirac(p.point(0)).unwrap(),
            &EmpiricalDist::dirac(q.point(0)).unwrap(),
        )
        .unwrap();
        assert_eq!(de.to_bits(), reduced.to_bits(), "case {case}");
    }
}

pub fn fubini_identity_for_embedding_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..500 {
        let dim = rng.random_range(1..4);
        let net = random_net(&mut rng, dim, 2);
        let p = random_dist(&mut rng, dim);
        let q = random_dist(&mut rng, dim);
        let trunk = net.clone();
        let kernel = Kernel::new(move |a, b| {
            let fa = trunk.forward_embed(&Tensor::vector(a.to_vec()).unwrap()).unwrap();
            let fb = trunk.forward_embed(&Tensor::vector(b.to_vec()).unwrap()).unwrap();
            fa.data().iter().zip(fb.data()).map(|(u, v)| u * v).sum()
        });
        let double_sum = psd_kernel_divergence(&kernel, &p, &q).unwrap();
        let mm = moment_matching(&net, &p, &q).unwrap();
        let scale = mm.abs().max(1e-12);
        assert!((double_sum - mm).abs() / scale <= 1e-9 || (double_sum - mm).abs() < 1e-13, "case {case}: {double_sum} vs {mm}");
        let back = psd_kernel_divergence(&kernel, &q, &p).unwrap();
        assert!((back - double_sum).abs() <= 1e-12 * (1.0 + double_sum.abs()));
    }
}

fn random_psd(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let b: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            a[i * d + j] = (0..d).map(|t| b[i * d + t] * b[j * d + t]).sum();
        }
    }
    a
}

pub fn mahalanobis_kernel_reduces_to_quadratic_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let d = rng.random_range(1..5);
        let a = random_psd(&mut rng, d);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let am = a.clone();
        let kernel = Kernel::new(move |u, v| {
            let mut s = 0.0;
            for i in 0..u.len() {
                for j in 0..v.len() {
                    s += u[i] * am[i * u.len() + j] * v[j];
                }
            }
            s
        });
        let via_kernel =
            psd_kernel_divergence(&kernel, &EmpiricalDist::dirac(&x).unwrap(), &EmpiricalDist::dirac(&y).unwrap())
                .unwrap();
        let diff: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u - v).collect();
        let mut quad = 0.0;
        for i in 0..d {
            for j in 0..d {
                quad += diff[i] * a[i * d + j] * diff[j];
            }
        }
        assert!((via_kernel - quad).abs() <= 1e-10 * (1.0 + quad.abs()), "{via_kernel} vs {quad}");
        let m = Mahalanobis::new(d, a).unwrap();
        assert!((mahalanobis(&m, &x, &y).unwrap() - quad).abs() <= 1e-10 * (1.0 + quad.abs()));
    }
}

fn random_gaussian(rng: &mut ChaCha8Rng, offset: [f64; 2]) -> GaussianDist {
    // Eigenvalues in [0.4, 2] keep the condition number at most 5.
    let (l1, l2) = (rng.random_range(0.4..2.0), rng.random_range(0.4..2.0));
    let t: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (c, s) = (t.cos(), t.sin());
    let cov = vec![c * c * l1 + s * s * l2, c * s * (l1 - l2), c * s * (l1 - l2), s * s * l1 + c * c * l2];
    GaussianDist::new(offset.to_vec(), cov).unwrap()
}

pub fn gaussian_kl_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..20 {
        let g1 = random_gaussian(&mut rng, [0.0, 0.0]);
        let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let r = rng.random_range(1.5..3.0);
        let g2 = random_gaussian(&mut rng, [r * ang.cos(), r * ang.sin()]);
        let exact = gaussian_kl(&g1, &g2).unwrap();
        let samples = g1.sample(100_000, &mut ChaCha8Rng::seed_from_u64(1000 + case)).unwrap();
        let mc = (0..samples.len())
            .map(|i| {
                let x = samples.point(i);
                g1.log_pdf(x).unwrap() - g2.log_pdf(x).unwrap()
            })
            .sum::<f64>()
            / samples.len() as f64;
        assert!((mc - exact).abs() / exact < 0.02, "case {case}: exact {exact}, mc {mc}");
    }
}
