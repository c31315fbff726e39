//! Divergences between finite distributions.
//!
//! The general, asymmetric case is the deep Bregman divergence generated by a
//! max-affine functional
//!
//! ```text
//! φ(p) = max_c ( E_p[w_c] + b_c )
//! D(p, q) = ( E_p[w_{p*}] + b_{p*} ) − ( E_p[w_{q*}] + b_{q*} )
//! ```
//!
//! where `p*`, `q*` are the maximizing heads of a [`BranchedNet`] at `p` and
//! `q`. Every term is evaluated on `p`'s points; `q` enters only through `q*`.
//!
//! The symmetric special cases are also here: moment matching between mean
//! embeddings, its single-point form (deep squared Euclidean), Mahalanobis,
//! the PSD-kernel double sum, and the closed-form Gaussian KL.

mod gaussian;

pub use gaussian::{gaussian_kl, GaussianDist};

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{shape_err, Error, Result};
use crate::nn::{BranchedNet, GradientBuffer};
use crate::tensor::{sq_dist, Tensor};

/// Values of `deep_bregman` in `[-NEG_TOLERANCE, 0)` are rounding and clamp to 0.
pub const NEG_TOLERANCE: f64 = 1e-9;

/// A weighted finite point set; a single point is a Dirac delta.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDist {
    points: Tensor,
    weights: Vec<f64>,
}

impl EmpiricalDist {
    /// Uniform weights over the rows of an `[n × d]` matrix (or a single `[d]` vector).
    pub fn uniform(points: Tensor) -> Result<Self> {
        let points = points.as_matrix();
        let n = points.rows();
        if n == 0 || points.cols() == 0 {
            return shape_err("an empirical distribution needs at least one point of width >= 1");
        }
        Ok(Self {
            points,
            weights: vec![1.0 / n as f64; n],
        })
    }

    /// Explicit nonnegative weights summing to 1 within 1e-12.
    pub fn weighted(points: Tensor, weights: Vec<f64>) -> Result<Self> {
        let points = points.as_matrix();
        if points.rows() == 0 || points.cols() == 0 {
            return shape_err("an empirical distribution needs at least one point of width >= 1");
        }
        if weights.len() != points.rows() {
            return shape_err(format!("{} weights for {} points", weights.len(), points.rows()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Invalid("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { points, weights })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::uniform(Tensor::from_rows(rows)?)
    }

    pub fn dirac(x: &[f64]) -> Result<Self> {
        Self::uniform(Tensor::vector(x.to_vec())?)
    }

    /// Uniform mixture of `parts`: each part carries total mass `1 / parts.len()`.
    pub fn mixture(parts: &[&EmpiricalDist]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return shape_err("mixture of zero distributions");
        };
        let d = first.dim();
        let share = 1.0 / parts.len() as f64;
        let mut data = Vec::new();
        let mut weights = Vec::new();
        for p in parts {
            if p.dim() != d {
                return shape_err(format!("mixture parts of width {d} and {}", p.dim()));
            }
            data.extend_from_slice(p.points.data());
            weights.extend(p.weights.iter().map(|w| w * share));
        }
        let n = weights.len();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Self::weighted(Tensor::matrix(n, d, data)?, weights)
    }

    /// Point matrix `[n × d]`.
    pub fn points(&self) -> &Tensor {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn is_dirac(&self) -> bool {
        self.len() == 1
    }

    /// Weighted mean of the points.
    pub fn mean(&self) -> Vec<f64> {
        weighted_row_mean(self.points.data(), &self.weights, self.dim())
    }
}

pub(crate) fn weighted_row_mean(rows: &[f64], weights: &[f64], width: usize) -> Vec<f64> {
    let mut m = vec![0.0; width];
    for (row, w) in rows.chunks_exact(width).zip(weights) {
        for (acc, v) in m.iter_mut().zip(row) {
            *acc += w * v;
        }
    }
    m
}

/// `φ(p)` together with the head attaining it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiEval {
    pub value: f64,
    pub argmax_head: usize,
}

fn check_width(net: &BranchedNet, p: &EmpiricalDist) -> Result<()> {
    if p.dim() != net.input_dim() {
        return shape_err(format!(
            "distribution of width {} for a net taking width {}",
            p.dim(),
            net.input_dim()
        ));
    }
    Ok(())
}

/// `E_p[w_c] + b_c` for every head `c`.
pub fn head_means(net: &BranchedNet, p: &EmpiricalDist) -> Result<Vec<f64>> {
    check_width(net, p)?;
    let h = net.head_rows(p.points.data(), p.len());
    Ok(weighted_row_mean(&h, &p.weights, net.num_heads()))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Divergence from precomputed head means of `p` and the argmax head of `q`.
pub(crate) fn bregman_from_head_means(hp: &[f64], q_star: usize) -> Result<f64> {
    let p_star = argmax(hp);
    let d = hp[p_star] - hp[q_star];
    clamp_nonneg(d)
}

fn clamp_nonneg(d: f64) -> Result<f64> {
    if d >= 0.0 {
        Ok(d)
    } else if d >= -NEG_TOLERANCE {
        Ok(0.0)
    } else {
        Err(Error::Consistency(format!("deep Bregman divergence evaluated to {d}")))
    }
}

/// The max-affine functional `φ(p) = max_c (E_p[w_c] + b_c)`.
pub fn phi_value(net: &BranchedNet, p: &EmpiricalDist) -> Result<PhiEval> {
    let h = head_means(net, p)?;
    let argmax_head = argmax(&h);
    Ok(PhiEval {
        value: h[argmax_head],
        argmax_head,
    })
}

/// Deep Bregman divergence `D(p, q)`.
pub fn deep_bregman(net: &BranchedNet, p: &EmpiricalDist, q: &EmpiricalDist) -> Result<f64> {
    check_width(net, q)?;
    let hp = head_means(net, p)?;
    let q_star = phi_value(net, q)?.argmax_head;
    bregman_from_head_means(&hp, q_star)
}

/// Subgradient of [`deep_bregman`] with `p*` and `q*` held fixed.
pub fn deep_bregman_grad(net: &BranchedNet, p: &EmpiricalDist, q: &EmpiricalDist) -> Result<GradientBuffer> {
    check_width(net, q)?;
    let p_star = phi_value(net, p)?.argmax_head;
    let q_star = phi_value(net, q)?.argmax_head;
    let mut grads = GradientBuffer::zeros_for(net);
    let mut d_heads = vec![0.0; p.len() * net.num_heads()];
    accumulate_bregman_head_grads(&mut d_heads, net.num_heads(), &p.weights, p_star, q_star, 1.0);
    if p_star != q_star {
        let tape = net.tape(p.points.data().to_vec(), p.len());
        net.backward_head_rows(&tape, &d_heads, &mut grads, false);
    }
    Ok(grads)
}

/// Adds `scale · ∂D/∂(head outputs)` for one distribution's rows into `d_heads` (`[n × K]`).
pub(crate) fn accumulate_bregman_head_grads(
    d_heads: &mut [f64],
    k: usize,
    weights: &[f64],
    p_star: usize,
    q_star: usize,
    scale: f64,
) {
    if p_star == q_star || scale == 0.0 {
        return;
    }
    for (row, w) in d_heads.chunks_exact_mut(k).zip(weights) {
        row[p_star] += scale * w;
        row[q_star] -= scale * w;
    }
}

/// Mean embedding `E_p[f_W]`.
pub fn mean_embedding(net: &BranchedNet, p: &EmpiricalDist) -> Result<Vec<f64>> {
    check_width(net, p)?;
    let e = net.embed_rows(p.points.data(), p.len());
    Ok(weighted_row_mean(&e, &p.weights, net.embed_dim()))
}

/// `‖E_p[f_W] − E_q[f_W]‖²`.
pub fn moment_matching(net: &BranchedNet, p: &EmpiricalDist, q: &EmpiricalDist) -> Result<f64> {
    let mp = mean_embedding(net, p)?;
    let mq = mean_embedding(net, q)?;
    Ok(sq_dist(&mp, &mq))
}

/// Gradient of [`moment_matching`] with respect to the trunk parameters.
pub fn moment_matching_grad(net: &BranchedNet, p: &EmpiricalDist, q: &EmpiricalDist) -> Result<GradientBuffer> {
    let mp = mean_embedding(net, p)?;
    let mq = mean_embedding(net, q)?;
    let g: Vec<f64> = mp.iter().zip(&mq).map(|(a, b)| 2.0 * (a - b)).collect();
    let mut grads = GradientBuffer::zeros_for(net);
    for (dist, sign) in [(p, 1.0), (q, -1.0)] {
        let mut d = Vec::with_capacity(dist.len() * g.len());
        for w in &dist.weights {
            d.extend(g.iter().map(|v| sign * w * v));
        }
        let tape = net.trunk_tape(dist.points.data().to_vec(), dist.len());
        net.backward_embed_rows(&tape, d, &mut grads, false);
    }
    Ok(grads)
}

/// `‖f_W(x) − f_W(y)‖²`, the moment-matching divergence between two Dirac deltas.
pub fn deep_euclidean(net: &BranchedNet, x: &Tensor, y: &Tensor) -> Result<f64> {
    let p = EmpiricalDist::uniform(x.clone())?;
    let q = EmpiricalDist::uniform(y.clone())?;
    if !p.is_dirac() || !q.is_dirac() {
        return shape_err("deep_euclidean compares single points");
    }
    moment_matching(net, &p, &q)
}

/// A symmetric positive semi-definite matrix `A` defining `(x−y)ᵀA(x−y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mahalanobis {
    dim: usize,
    a: Vec<f64>,
}

impl Mahalanobis {
    /// `a` is row-major `[d × d]`; rejected unless symmetric and PSD within 1e-10.
    pub fn new(dim: usize, a: Vec<f64>) -> Result<Self> {
        if dim == 0 || a.len() != dim * dim {
            return shape_err(format!("matrix for dimension {dim} needs {} values, got {}", dim * dim, a.len()));
        }
        if !a.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("Mahalanobis matrix".into()));
        }
        let m = DMatrix::from_row_slice(dim, dim, &a);
        if (&m - m.transpose()).abs().max() > 1e-10 {
            return Err(Error::Invalid("Mahalanobis matrix is not symmetric".into()));
        }
        let min_eig = SymmetricEigen::new(m).eigenvalues.min();
        if min_eig < -1e-10 {
            return Err(Error::Invalid(format!("Mahalanobis matrix is not PSD (eigenvalue {min_eig})")));
        }
        Ok(Self { dim, a })
    }

    pub fn identity(dim: usize) -> Self {
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            a[i * dim + i] = 1.0;
        }
        Self { dim, a }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    /// Bilinear form `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let d = self.dim;
        let mut s = 0.0;
        for i in 0..d {
            let mut row = 0.0;
            for j in 0..d {
                row += self.a[i * d + j] * y[j];
            }
            s += x[i] * row;
        }
        s
    }
}

/// `(x − y)ᵀ A (x − y)`.
pub fn mahalanobis(a: &Mahalanobis, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != a.dim || y.len() != a.dim {
        return shape_err(format!("points of width {} and {} for a {}-dim metric", x.len(), y.len(), a.dim));
    }
    let diff: Vec<f64> = x.iter().zip(y).map(|(u, v)| u - v).collect();
    Ok(a.bilinear(&diff, &diff).max(0.0))
}

/// A symmetric PSD function of two points. PSD-ness is the caller's obligation;
/// [`psd_kernel_divergence`] checks it only on the Gram matrix it builds.
#[derive(Clone)]
pub struct Kernel(Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>);

impl Kernel {
    pub fn new(f: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        (self.0)(x, y)
    }
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Kernel(..)")
    }
}

/// Smallest Gram eigenvalue tolerated before a kernel is declared non-PSD.
pub const GRAM_EIG_TOLERANCE: f64 = 1e-8;

/// `Σ_i Σ_j (p_i − q_i)(p_j − q_j) ψ(s_i, s_j)` over the union support `s` of `p` and `q`.
pub fn psd_kernel_divergence(kernel: &Kernel, p: &EmpiricalDist, q: &EmpiricalDist) -> Result<f64> {
    if p.dim() != q.dim() {
        return shape_err(format!("distributions of width {} and {}", p.dim(), q.dim()));
    }
    // Identical points (bitwise) share one support slot.
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut support: Vec<&[f64]> = Vec::new();
    let mut delta: Vec<f64> = Vec::new();
    for (dist, sign) in [(p, 1.0), (q, -1.0)] {
        for (x, w) in dist.points.row_iter().zip(&dist.weights) {
            let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
            let slot = *index.entry(key).or_insert_with(|| {
                support.push(x);
                delta.push(0.0);
                support.len() - 1
            });
            delta[slot] += sign * w;
        }
    }
    let n = support.len();
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let k = kernel.eval(support[i], support[j]);
            if !k.is_finite() {
                return Err(Error::NonFinite(format!("kernel value at support ({i}, {j})")));
            }
            gram[(i, j)] = k;
            gram[(j, i)] = k;
        }
    }
    let min_eig = SymmetricEigen::new(gram.clone()).eigenvalues.min();
    if min_eig < -GRAM_EIG_TOLERANCE {
        return Err(Error::Invalid(format!("kernel Gram matrix has eigenvalue {min_eig}")));
    }
    let mut total = 0.0;
    for i in 0..n {
        if delta[i] == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for j in 0..n {
            row += delta[j] * gram[(i, j)];
        }
        total += delta[i] * row;
    }
    Ok(total.max(0.0))
}

/// The divergence family used by the training, clustering and k-NN code.
#[derive(Debug, Clone)]
pub enum Divergence {
    DeepBregman(BranchedNet),
    MomentMatching(BranchedNet),
    /// Moment matching restricted to single-point distributions.
    DeepEuclidean(BranchedNet),
    /// `(E_p[x] − E_q[x])ᵀ A (E_p[x] − E_q[x])`, the linear-kernel double sum.
    Mahalanobis(Mahalanobis),
    /// KL between maximum-likelihood Gaussian fits of the two point sets.
    GaussianKl,
    PsdKernel(Kernel),
}

impl Divergence {
    pub fn name(&self) -> &'static str {
        match self {
            Divergence::DeepBregman(_) => "deep_bregman",
            Divergence::MomentMatching(_) => "moment_matching",
            Divergence::DeepEuclidean(_) => "deep_euclidean",
            Divergence::Mahalanobis(_) => "mahalanobis",
            Divergence::GaussianKl => "gaussian_kl",
            Divergence::PsdKernel(_) => "psd_kernel",
        }
    }

    pub fn evaluate(&self, p: &EmpiricalDist, q: &EmpiricalDist) -> Result<f64> {
        match self {
            Divergence::DeepBregman(net) => deep_bregman(net, p, q),
            Divergence::MomentMatching(net) => moment_matching(net, p, q),
            Divergence::DeepEuclidean(net) => {
                if !p.is_dirac() || !q.is_dirac() {
                    return shape_err("deep_euclidean compares single points");
                }
                moment_matching(net, p, q)
            }
            Divergence::Mahalanobis(a) => mahalanobis(a, &p.mean(), &q.mean()),
            Divergence::GaussianKl => gaussian_kl(&GaussianDist::fit(p)?, &GaussianDist::fit(q)?),
            Divergence::PsdKernel(k) => psd_kernel_divergence(k, p, q),
        }
    }
}
