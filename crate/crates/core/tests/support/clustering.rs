#![allow(dead_code)]

use std::collections::HashSet;

use bregdiv::clustering::{adjusted_rand_index, bregman_kmeans, davis_dhillon_kmeans, knn_classify, ClusterResult};
use bregdiv::divergence::{Kernel, Mahalanobis};
use bregdiv::losses::{mine_batch, MineMode, Mined};
use bregdiv::nn::{Activation, DenseLayer, Mlp};
use bregdiv::{BranchedNet, Divergence, EmpiricalDist, GaussianDist, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_net(rng: &mut ChaCha8Rng) -> BranchedNet {
    BranchedNet::glorot(&[2, 6, 3], Activation::Tanh, Activation::Tanh, &[], Activation::Identity, 2, rng).unwrap()
}

fn random_dists(rng: &mut ChaCha8Rng, n: usize) -> Vec<EmpiricalDist> {
    (0..n)
        .map(|_| {
            let m = rng.random_range(1..4);
            let c: [f64; 2] = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let pts: Vec<f64> = (0..m).flat_map(|_| [c[0] + rng.random_range(-0.5..0.5), c[1] + rng.random_range(-0.5..0.5)]).collect();
            EmpiricalDist::uniform(Tensor::matrix(m, 2, pts).unwrap()).unwrap()
        })
        .collect()
}

/// Mean embedding from one forward pass per point.
fn embedding(net: &BranchedNet, p: &EmpiricalDist) -> Vec<f64> {
    let mut m = vec![0.0; net.embed_dim()];
    for i in 0..p.len() {
        let e = net.forward_embed(&Tensor::vector(p.point(i).to_vec()).unwrap()).unwrap();
        for (a, v) in m.iter_mut().zip(e.data()) {
            *a += p.weights()[i] * v;
        }
    }
    m
}

fn best_two_partition(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    // Fixing item 0 in cluster 0 enumerates each 2-partition once.
    for mask in 0..(1u32 << (n - 1)) {
        let side = |i: usize| i > 0 && mask >> (i - 1) & 1 == 1;
        if (0..n).all(side) || !(0..n).any(side) {
            continue;
        }
        let mut total = 0.0;
        for s in [false, true] {
            let members: Vec<&Vec<f64>> = (0..n).filter(|&i| side(i) == s).map(|i| &points[i]).collect();
            let d = members[0].len();
            let c: Vec<f64> = (0..d).map(|j| members.iter().map(|v| v[j]).sum::<f64>() / members.len() as f64).collect();
            total += members.iter().map(|v| v.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).sum::<f64>();
        }
        best = best.min(total);
    }
    best
}

fn assert_monotone(r: &ClusterResult) {
    for w in r.objective_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-9 * w[0].abs(), "objective rose: {:?}", r.objective_trace);
    }
}

/// Returns how many of the 100 runs reached the optimum.
pub fn moment_matching_kmeans_finds_the_best_two_partition() -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut hits = 0;
    for seed in 0..100 {
        let n = rng.random_range(3..=8);
        let net = small_net(&mut rng);
        let dists = random_dists(&mut rng, n);
        let emb: Vec<Vec<f64>> = dists.iter().map(|p| embedding(&net, p)).collect();
        let optimum = best_two_partition(&emb);
        let r = bregman_kmeans(&dists, 2, &Divergence::MomentMatching(net), 100, seed).unwrap();
        assert_monotone(&r);
        if (r.objective() - optimum).abs() <= 1e-9 {
            hits += 1;
        }
    }
    assert!(hits >= 90, "{hits}/100 runs reached the optimum");
    hits
}

pub fn objective_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..40 {
        let n = rng.random_range(6..30);
        let k = rng.random_range(2..5);
        let net = small_net(&mut rng);
        let dists = random_dists(&mut rng, n);
        let rbf = Kernel::new(|x, y| (-x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).exp());
        let divs = [
            Divergence::MomentMatching(net.clone()),
            Divergence::DeepBregman(net),
            Divergence::Mahalanobis(Mahalanobis::new(2, vec![2.0, 0.5, 0.5, 1.0]).unwrap()),
            Divergence::PsdKernel(rbf),
        ];
        for div in &divs {
            assert_monotone(&bregman_kmeans(&dists, k, div, 100, seed).unwrap());
        }
        let gs: Vec<GaussianDist> = (0..n)
            .map(|_| {
                let s = rng.random_range(0.2..2.0);
                GaussianDist::isotropic(vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)], s).unwrap()
            })
            .collect();
        assert_monotone(&davis_dhillon_kmeans(&gs, k, 100, seed).unwrap());
    }
}

pub fn davis_dhillon_recovers_separated_groups() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for seed in 0..20 {
        let mut gs = Vec::new();
        let mut truth = Vec::new();
        for i in 0..16 {
            let side = if i % 2 == 0 { 10.0 } else { -10.0 };
            let mean = vec![side + rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
            gs.push(GaussianDist::isotropic(mean, rng.random_range(0.5..1.5)).unwrap());
            truth.push(i % 2);
        }
        let r = davis_dhillon_kmeans(&gs, 2, 100, seed).unwrap();
        assert_eq!(adjusted_rand_index(&truth, &r.assignments).unwrap(), 1.0);
    }
}

pub fn mining_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let n = rng.random_range(0..10);
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let Mined::Pairs(pairs) = mine_batch(&labels, MineMode::AllPairs) else { panic!() };
        let mut expected = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                expected.push((a, b, labels[a] == labels[b]));
            }
        }
        let got: Vec<_> = pairs.iter().map(|p| (p.a, p.b, p.similar)).collect();
        assert_eq!(got, expected);

        let Mined::Triplets(ts) = mine_batch(&labels, MineMode::AllTriplets) else { panic!() };
        let count: usize = (0..n)
            .map(|a| {
                let same = labels.iter().filter(|l| **l == labels[a]).count();
                (same - 1) * (n - same)
            })
            .sum();
        assert_eq!(ts.len(), count);
        let unique: HashSet<_> = ts.iter().map(|t| (t.anchor, t.positive, t.negative)).collect();
        assert_eq!(unique.len(), ts.len());
        for t in &ts {
            assert!(t.anchor != t.positive);
            assert_eq!(labels[t.anchor], labels[t.positive]);
            assert_ne!(labels[t.anchor], labels[t.negative]);
        }
        let keys: Vec<_> = ts.iter().map(|t| (t.anchor, t.positive, t.negative)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }
}

/// Majority vote over raw squared Euclidean distances with the same tie rules.
fn reference_knn(train: &[Vec<f64>], labels: &[usize], x: &[f64], k: usize) -> usize {
    let mut d: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(j, t)| (t.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum(), j))
        .collect();
    d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut best: Option<(usize, usize, f64)> = None;
    for label in 0..=*labels.iter().max().unwrap() {
        let hits: Vec<f64> = d[..k].iter().filter(|(_, j)| labels[*j] == label).map(|(v, _)| *v).collect();
        if hits.is_empty() {
            continue;
        }
        let cand = (label, hits.len(), hits.iter().sum::<f64>());
        best = match best {
            None => Some(cand),
            Some(b) if cand.1 > b.1 || (cand.1 == b.1 && cand.2 < b.2) => Some(cand),
            keep => keep,
        };
    }
    best.unwrap().0
}

pub fn knn_with_identity_embedding_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let head = Mlp::new(2, vec![DenseLayer::zeros(2, 1, Activation::Identity).unwrap()]).unwrap();
    let net = BranchedNet::new(Mlp::identity(2).unwrap(), vec![head]).unwrap();
    let div = Divergence::DeepEuclidean(net);
    for _ in 0..50 {
        let n = rng.random_range(3..25);
        // Integer grid coordinates make exact distance ties common.
        let train: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-3..4) as f64, rng.random_range(-3..4) as f64]).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let test: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.random_range(-3..4) as f64, rng.random_range(-3..4) as f64]).collect();
        let k = rng.random_range(1..=n.min(7));
        let to_dists = |v: &[Vec<f64>]| v.iter().map(|x| EmpiricalDist::dirac(x).unwrap()).collect::<Vec<_>>();
        let got = knn_classify(&to_dists(&train), &labels, &to_dists(&test), &div, k).unwrap();
        let want: Vec<usize> = test.iter().map(|x| reference_knn(&train, &labels, x, k)).collect();
        assert_eq!(got, want);
    }
}
