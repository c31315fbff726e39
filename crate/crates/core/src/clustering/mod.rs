//! Lloyd-style k-means over distributions, k-NN classification and partition scores.
//!
//! [`bregman_kmeans`] assigns each distribution to the centroid minimizing
//! `div(member, centroid)`, with the member as the first argument. A
//! centroid is the uniform mixture of its members, represented by the
//! statistic the divergence actually reads:
//!
//! | divergence | per-item statistic | centroid |
//! |------------|--------------------|----------|
//! | moment matching, deep Euclidean | mean embedding | average of member embeddings |
//! | Mahalanobis | mean | average of member means |
//! | deep Bregman | head means `E_p[w_c] + b_c` | average of member head means |
//! | PSD kernel | kernel mean map | member set (kernel k-means) |
//!
//! Each is exact for the uniform mixture, since all of these statistics are
//! linear in the distribution.
//!
//! [`davis_dhillon_kmeans`] clusters Gaussians under KL, with the centroid
//! being the moment-matched Gaussian of the members.

mod score;

pub use score::{adjusted_rand_index, rand_index, score_partition, PartitionScore};

use log::{debug, info};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::divergence::{
    argmax, bregman_from_head_means, gaussian_kl, weighted_row_mean, Divergence, EmpiricalDist, GaussianDist,
    Kernel,
};
use crate::error::{Error, Result};
use crate::nn::BranchedNet;
use crate::par::map_indexed;
use crate::rng::{domain, substream};
use crate::tensor::sq_dist;

pub const DEFAULT_MAX_ITER: usize = 100;
/// Independent k-means++ starts per run; the lowest final objective wins.
pub const DEFAULT_RESTARTS: usize = 10;

/// Lloyd iteration settings. Restart `r` seeds k-means++ from its own
/// substream of `seed`, so results do not depend on the restart count of
/// earlier runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansOptions {
    pub k: usize,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl KMeansOptions {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iter: DEFAULT_MAX_ITER,
            restarts: DEFAULT_RESTARTS,
            seed,
        }
    }
}

// Relative slack when checking that the objective does not increase.
const OBJECTIVE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub assignments: Vec<usize>,
    /// Total within-cluster divergence after each assignment step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl ClusterResult {
    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(0.0)
    }
}

/// Per-item statistic from which a divergence can be evaluated.
#[derive(Debug, Clone)]
pub(crate) enum Stat<'a> {
    Vector(Vec<f64>),
    Heads(Vec<f64>),
    Gaussian(GaussianDist),
    Raw(&'a EmpiricalDist),
}

// Rows per forward pass when computing statistics.
const ROWS_PER_PASS: usize = 4096;

fn batched_means<F>(dists: &[EmpiricalDist], width: usize, rows_out: F) -> Vec<Vec<f64>>
where
    F: Fn(&[f64], usize) -> Vec<f64> + Sync,
{
    // Group consecutive items into passes of at most ROWS_PER_PASS rows.
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    let mut rows = 0;
    for (i, d) in dists.iter().enumerate() {
        if rows > 0 && rows + d.len() > ROWS_PER_PASS {
            groups.push((start, i));
            start = i;
            rows = 0;
        }
        rows += d.len();
    }
    if start < dists.len() {
        groups.push((start, dists.len()));
    }
    map_indexed(groups.len(), |g| {
        let (lo, hi) = groups[g];
        let items = &dists[lo..hi];
        let n: usize = items.iter().map(EmpiricalDist::len).sum();
        let mut x = Vec::with_capacity(n * items[0].dim());
        for d in items {
            x.extend_from_slice(d.points().data());
        }
        let out = rows_out(&x, n);
        let mut off = 0;
        items
            .iter()
            .map(|d| {
                let m = weighted_row_mean(&out[off * width..(off + d.len()) * width], d.weights(), width);
                off += d.len();
                m
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

fn check_net_width(net: &BranchedNet, dists: &[EmpiricalDist]) -> Result<()> {
    match dists.iter().find(|d| d.dim() != net.input_dim()) {
        Some(d) => Err(Error::Shape(format!(
            "distribution of width {} for a net taking width {}",
            d.dim(),
            net.input_dim()
        ))),
        None => Ok(()),
    }
}

/// Statistics of `dists` under `div`, computed in stacked forward passes.
pub(crate) fn prepare<'a>(div: &Divergence, dists: &'a [EmpiricalDist]) -> Result<Vec<Stat<'a>>> {
    Ok(match div {
        Divergence::MomentMatching(net) | Divergence::DeepEuclidean(net) => {
            check_net_width(net, dists)?;
            if matches!(div, Divergence::DeepEuclidean(_)) && !dists.iter().all(EmpiricalDist::is_dirac) {
                return Err(Error::Shape("deep_euclidean compares single points".into()));
            }
            batched_means(dists, net.embed_dim(), |x, n| net.embed_rows(x, n))
                .into_iter()
                .map(Stat::Vector)
                .collect()
        }
        Divergence::DeepBregman(net) => {
            check_net_width(net, dists)?;
            batched_means(dists, net.num_heads(), |x, n| net.head_rows(x, n))
                .into_iter()
                .map(Stat::Heads)
                .collect()
        }
        Divergence::Mahalanobis(a) => {
            if let Some(d) = dists.iter().find(|d| d.dim() != a.dim()) {
                return Err(Error::Shape(format!("distribution of width {} for a {}-d metric", d.dim(), a.dim())));
            }
            dists.iter().map(|d| Stat::Vector(d.mean())).collect()
        }
        Divergence::GaussianKl => dists
            .iter()
            .map(|d| GaussianDist::fit(d).map(Stat::Gaussian))
            .collect::<Result<_>>()?,
        Divergence::PsdKernel(_) => dists.iter().map(Stat::Raw).collect(),
    })
}

/// `div(p, q)` from prepared statistics.
pub(crate) fn stat_divergence(div: &Divergence, p: &Stat, q: &Stat) -> Result<f64> {
    match (div, p, q) {
        (Divergence::MomentMatching(_) | Divergence::DeepEuclidean(_), Stat::Vector(a), Stat::Vector(b)) => {
            Ok(sq_dist(a, b))
        }
        (Divergence::Mahalanobis(m), Stat::Vector(a), Stat::Vector(b)) => crate::divergence::mahalanobis(m, a, b),
        (Divergence::DeepBregman(_), Stat::Heads(hp), Stat::Heads(hq)) => bregman_from_head_means(hp, argmax(hq)),
        (Divergence::GaussianKl, Stat::Gaussian(a), Stat::Gaussian(b)) => gaussian_kl(a, b),
        (Divergence::PsdKernel(k), Stat::Raw(a), Stat::Raw(b)) => crate::divergence::psd_kernel_divergence(k, a, b),
        _ => Err(Error::Invalid(format!("statistics do not match divergence {}", div.name()))),
    }
}

/// How a k-means variant measures items against centroids and rebuilds centroids.
trait Lloyd {
    type Centroid;
    fn len(&self) -> usize;
    fn centroid(&self, members: &[usize]) -> Result<Self::Centroid>;
    fn dist(&self, item: usize, c: &Self::Centroid) -> Result<f64>;
}

fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// k-means++ seeding: the first seed uniform, then each next seed drawn with
/// probability proportional to its divergence to the nearest chosen seed.
fn kmeanspp<L: Lloyd + Sync>(problem: &L, k: usize, rng: &mut impl Rng) -> Result<Vec<L::Centroid>>
where
    L::Centroid: Sync,
{
    let n = problem.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut cents = vec![problem.centroid(&[first])?];
    let mut nearest: Vec<f64> = vec![f64::INFINITY; n];
    while cents.len() < k {
        let last = cents.last().expect("nonempty");
        let d = map_indexed(n, |i| problem.dist(i, last));
        for (acc, v) in nearest.iter_mut().zip(d) {
            *acc = acc.min(v?);
        }
        let weight = |i: usize| if chosen[i] { 0.0 } else { nearest[i] };
        let total: f64 = (0..n).map(weight).sum();
        let pick = if total > 0.0 && total.is_finite() {
            let mut r = rng.random::<f64>() * total;
            let mut pick = None;
            for i in 0..n {
                let w = weight(i);
                if w > 0.0 {
                    pick = Some(i);
                    if r < w {
                        break;
                    }
                    r -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        cents.push(problem.centroid(&[pick])?);
    }
    Ok(cents)
}

fn run_lloyd<L: Lloyd + Sync>(problem: &L, opts: &KMeansOptions) -> Result<ClusterResult>
where
    L::Centroid: Sync,
{
    let n = problem.len();
    if opts.k == 0 || opts.k > n {
        return Err(Error::Invalid(format!("k = {} with {n} items", opts.k)));
    }
    if opts.restarts == 0 {
        return Err(Error::Invalid("k-means needs at least one restart".into()));
    }
    let mut best: Option<ClusterResult> = None;
    for r in 0..opts.restarts {
        let run = lloyd_once(problem, opts.k, opts.max_iter, opts.seed, r as u64)?;
        debug!("k-means restart {r}: objective {}", run.objective());
        if best.as_ref().is_none_or(|b| run.objective() < b.objective()) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn lloyd_once<L: Lloyd + Sync>(problem: &L, k: usize, max_iter: usize, seed: u64, restart: u64) -> Result<ClusterResult>
where
    L::Centroid: Sync,
{
    let n = problem.len();
    let mut rng = substream(seed, domain::CLUSTER, restart);
    let mut cents = kmeanspp(problem, k, &mut rng)?;
    let mut assignments: Vec<usize> = Vec::new();
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let rows = map_indexed(n, |i| {
            cents
                .iter()
                .map(|c| problem.dist(i, c))
                .collect::<Result<Vec<f64>>>()
        });
        let mut next = Vec::with_capacity(n);
        let mut own = Vec::with_capacity(n);
        for r in rows {
            let r = r?;
            let c = argmin_first(&r);
            next.push(c);
            own.push(r[c]);
        }
        let objective: f64 = own.iter().sum();
        if !objective.is_finite() {
            return Err(Error::Numeric(format!("k-means objective is {objective} at iteration {iterations}")));
        }
        if let Some(&prev) = trace.last() {
            if objective > prev + OBJECTIVE_SLACK * prev.abs().max(1.0) {
                return Err(Error::Consistency(format!(
                    "k-means objective rose from {prev} to {objective} at iteration {iterations}"
                )));
            }
        }
        trace.push(objective);
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;

        let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &c) in assignments.iter().enumerate() {
            members[c].push(i);
        }
        for c in 0..k {
            if !members[c].is_empty() {
                continue;
            }
            // Move the worst-served item out of a cluster that can spare it.
            let far = (0..n)
                .filter(|&i| members[assignments[i]].len() > 1)
                .fold(None::<usize>, |best, i| match best {
                    Some(b) if own[b] >= own[i] => Some(b),
                    _ => Some(i),
                })
                .ok_or_else(|| Error::Consistency("no cluster can donate a member".into()))?;
            let from = assignments[far];
            info!("cluster {c} is empty at iteration {iterations}; reseeding with item {far} from cluster {from}");
            members[from].retain(|&i| i != far);
            members[c].push(far);
            assignments[far] = c;
            own[far] = 0.0;
        }
        cents = members.iter().map(|m| problem.centroid(m)).collect::<Result<_>>()?;
        debug!("k-means iteration {iterations}: objective {objective}");
    }
    Ok(ClusterResult {
        assignments,
        objective_trace: trace,
        iterations,
        converged,
    })
}

struct StatProblem<'a, 'd> {
    div: &'a Divergence,
    stats: Vec<Stat<'d>>,
}

impl Lloyd for StatProblem<'_, '_> {
    type Centroid = Stat<'static>;

    fn len(&self) -> usize {
        self.stats.len()
    }

    fn centroid(&self, members: &[usize]) -> Result<Stat<'static>> {
        let vec_of = |i: usize| -> Result<&[f64]> {
            match &self.stats[i] {
                Stat::Vector(v) | Stat::Heads(v) => Ok(v),
                _ => Err(Error::Unsupported(format!(
                    "{} has no closed-form centroid here",
                    self.div.name()
                ))),
            }
        };
        let mut m = vec![0.0; vec_of(members[0])?.len()];
        for &i in members {
            for (a, v) in m.iter_mut().zip(vec_of(i)?) {
                *a += v;
            }
        }
        let inv = 1.0 / members.len() as f64;
        m.iter_mut().for_each(|v| *v *= inv);
        Ok(match self.stats[members[0]] {
            Stat::Heads(_) => Stat::Heads(m),
            _ => Stat::Vector(m),
        })
    }

    fn dist(&self, item: usize, c: &Stat<'static>) -> Result<f64> {
        stat_divergence(self.div, &self.stats[item], c)
    }
}

/// Kernel k-means on the distribution-level Gram matrix
/// `G[i][j] = Σ_a Σ_b w_a w_b ψ(x_a, y_b)`.
struct KernelProblem {
    n: usize,
    gram: Vec<f64>,
}

impl KernelProblem {
    fn new(kernel: &Kernel, dists: &[EmpiricalDist]) -> Self {
        let n = dists.len();
        let rows = map_indexed(n, |i| {
            (0..n)
                .map(|j| {
                    let (p, q) = (&dists[i], &dists[j]);
                    let mut s = 0.0;
                    for (x, wx) in p.points().row_iter().zip(p.weights()) {
                        for (y, wy) in q.points().row_iter().zip(q.weights()) {
                            s += wx * wy * kernel.eval(x, y);
                        }
                    }
                    s
                })
                .collect::<Vec<f64>>()
        });
        Self {
            n,
            gram: rows.into_iter().flatten().collect(),
        }
    }
}

struct KernelCentroid {
    members: Vec<usize>,
    self_term: f64,
}

impl Lloyd for KernelProblem {
    type Centroid = KernelCentroid;

    fn len(&self) -> usize {
        self.n
    }

    fn centroid(&self, members: &[usize]) -> Result<KernelCentroid> {
        let m = members.len() as f64;
        let mut s = 0.0;
        for &a in members {
            for &b in members {
                s += self.gram[a * self.n + b];
            }
        }
        Ok(KernelCentroid {
            members: members.to_vec(),
            self_term: s / (m * m),
        })
    }

    fn dist(&self, item: usize, c: &KernelCentroid) -> Result<f64> {
        let cross: f64 = c.members.iter().map(|&j| self.gram[item * self.n + j]).sum::<f64>() / c.members.len() as f64;
        Ok((self.gram[item * self.n + item] - 2.0 * cross + c.self_term).max(0.0))
    }
}

/// Distributional k-means under `div` with [`DEFAULT_RESTARTS`] starts; see
/// the module docs for centroids. Gaussian KL is not accepted here; use
/// [`davis_dhillon_kmeans`].
pub fn bregman_kmeans(
    dists: &[EmpiricalDist],
    k: usize,
    div: &Divergence,
    max_iter: usize,
    seed: u64,
) -> Result<ClusterResult> {
    bregman_kmeans_with(dists, div, &KMeansOptions { max_iter, ..KMeansOptions::new(k, seed) })
}

pub fn bregman_kmeans_with(dists: &[EmpiricalDist], div: &Divergence, opts: &KMeansOptions) -> Result<ClusterResult> {
    if dists.is_empty() {
        return Err(Error::Invalid("no distributions to cluster".into()));
    }
    match div {
        Divergence::GaussianKl => Err(Error::Unsupported(
            "Gaussian KL clustering is davis_dhillon_kmeans".into(),
        )),
        Divergence::PsdKernel(kernel) => {
            if let Some(d) = dists.iter().find(|d| d.dim() != dists[0].dim()) {
                return Err(Error::Shape(format!("mixed widths {} and {}", dists[0].dim(), d.dim())));
            }
            run_lloyd(&KernelProblem::new(kernel, dists), opts)
        }
        _ => {
            let problem = StatProblem {
                div,
                stats: prepare(div, dists)?,
            };
            run_lloyd(&problem, opts)
        }
    }
}

struct GaussProblem<'a> {
    gs: &'a [GaussianDist],
}

impl Lloyd for GaussProblem<'_> {
    type Centroid = GaussianDist;

    fn len(&self) -> usize {
        self.gs.len()
    }

    /// `μ̄ = mean μ_i`, `Σ̄ = mean (Σ_i + (μ_i − μ̄)(μ_i − μ̄)ᵀ)`.
    fn centroid(&self, members: &[usize]) -> Result<GaussianDist> {
        let d = self.gs[members[0]].dim();
        let inv = 1.0 / members.len() as f64;
        let mut mu = vec![0.0; d];
        for &i in members {
            for (a, v) in mu.iter_mut().zip(self.gs[i].mean()) {
                *a += v;
            }
        }
        mu.iter_mut().for_each(|v| *v *= inv);
        let mut cov = vec![0.0; d * d];
        for &i in members {
            let g = &self.gs[i];
            let c = g.cov();
            let dm: Vec<f64> = g.mean().iter().zip(&mu).map(|(a, b)| a - b).collect();
            for r in 0..d {
                for s in 0..d {
                    cov[r * d + s] += c[r * d + s] + dm[r] * dm[s];
                }
            }
        }
        cov.iter_mut().for_each(|v| *v *= inv);
        // Average of symmetric matrices; remove rounding asymmetry.
        for r in 0..d {
            for s in r + 1..d {
                let m = 0.5 * (cov[r * d + s] + cov[s * d + r]);
                cov[r * d + s] = m;
                cov[s * d + r] = m;
            }
        }
        GaussianDist::new(mu, cov)
    }

    fn dist(&self, item: usize, c: &GaussianDist) -> Result<f64> {
        gaussian_kl(&self.gs[item], c)
    }
}

/// k-means over Gaussians under `KL(member ‖ centroid)`, with [`DEFAULT_RESTARTS`] starts.
pub fn davis_dhillon_kmeans(gaussians: &[GaussianDist], k: usize, max_iter: usize, seed: u64) -> Result<ClusterResult> {
    davis_dhillon_kmeans_with(gaussians, &KMeansOptions { max_iter, ..KMeansOptions::new(k, seed) })
}

pub fn davis_dhillon_kmeans_with(gaussians: &[GaussianDist], opts: &KMeansOptions) -> Result<ClusterResult> {
    if gaussians.is_empty() {
        return Err(Error::Invalid("no Gaussians to cluster".into()));
    }
    if let Some(g) = gaussians.iter().find(|g| g.dim() != gaussians[0].dim()) {
        return Err(Error::Shape(format!("mixed dimensions {} and {}", gaussians[0].dim(), g.dim())));
    }
    run_lloyd(&GaussProblem { gs: gaussians }, opts)
}

/// The centroid [`davis_dhillon_kmeans`] uses for a set of Gaussians.
pub fn gaussian_centroid(gaussians: &[GaussianDist]) -> Result<GaussianDist> {
    if gaussians.is_empty() {
        return Err(Error::Invalid("no Gaussians".into()));
    }
    let all: Vec<usize> = (0..gaussians.len()).collect();
    GaussProblem { gs: gaussians }.centroid(&all)
}

/// Majority vote among the `k_nn` training items with the smallest
/// `div(test, train)`. Distance ties go to the lower training index; vote ties
/// to the label with the smaller summed divergence, then the smaller label.
pub fn knn_classify(
    train: &[EmpiricalDist],
    train_labels: &[usize],
    test: &[EmpiricalDist],
    div: &Divergence,
    k_nn: usize,
) -> Result<Vec<usize>> {
    if train.len() != train_labels.len() {
        return Err(Error::Invalid(format!(
            "{} training items but {} labels",
            train.len(),
            train_labels.len()
        )));
    }
    if k_nn == 0 || k_nn > train.len() {
        return Err(Error::Invalid(format!("k_nn = {k_nn} with {} training items", train.len())));
    }
    let train_stats = prepare(div, train)?;
    let test_stats = prepare(div, test)?;
    let out = map_indexed(test.len(), |t| -> Result<usize> {
        let mut d: Vec<(f64, usize)> = train_stats
            .iter()
            .enumerate()
            .map(|(j, s)| stat_divergence(div, &test_stats[t], s).map(|v| (v, j)))
            .collect::<Result<_>>()?;
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes: Vec<(usize, usize, f64)> = Vec::new();
        for &(v, j) in &d[..k_nn] {
            let l = train_labels[j];
            match votes.iter_mut().find(|e| e.0 == l) {
                Some(e) => {
                    e.1 += 1;
                    e.2 += v;
                }
                None => votes.push((l, 1, v)),
            }
        }
        votes.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.total_cmp(&b.2)).then(a.0.cmp(&b.0)));
        Ok(votes[0].0)
    });
    out.into_iter().collect()
}

/// JSON summary of a clustering run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub iterations: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rand_index: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adjusted_rand_index: Option<f64>,
}

impl ClusterSummary {
    pub fn new(result: &ClusterResult, score: Option<PartitionScore>) -> Self {
        Self {
            iterations: result.iterations,
            converged: result.converged,
            objective_trace: result.objective_trace.clone(),
            rand_index: score.map(|s| s.rand_index),
            adjusted_rand_index: score.map(|s| s.adjusted_rand_index),
        }
    }
}

/// Writes `item_id,assignment` rows.
pub fn write_assignments_csv<W: std::io::Write>(ids: &[String], assignments: &[usize], out: W) -> Result<()> {
    if ids.len() != assignments.len() {
        return Err(Error::Invalid(format!("{} ids for {} assignments", ids.len(), assignments.len())));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["item_id", "assignment"])?;
    for (id, a) in ids.iter().zip(assignments) {
        w.write_record([id.as_str(), &a.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
