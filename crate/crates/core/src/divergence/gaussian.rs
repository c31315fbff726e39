use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

use super::EmpiricalDist;

/// Multivariate normal `N(mean, cov)` with a positive-definite covariance.
#[derive(Debug, Clone)]
pub struct GaussianDist {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl PartialEq for GaussianDist {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov
    }
}

impl GaussianDist {
    /// `cov` is row-major `[d × d]`; it must be symmetric within 1e-10 and positive definite.
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return shape_err("gaussian needs dimension >= 1");
        }
        if cov.len() != d * d {
            return shape_err(format!("covariance of a {d}-dim gaussian needs {} values, got {}", d * d, cov.len()));
        }
        if !mean.iter().chain(&cov).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("gaussian parameters".into()));
        }
        let cov = DMatrix::from_row_slice(d, d, &cov);
        for i in 0..d {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-10 {
                    return Err(Error::Invalid(format!("covariance is not symmetric at ({i}, {j})")));
                }
            }
        }
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::Numeric("covariance is not positive definite".into()))?;
        Ok(Self {
            mean: DVector::from_vec(mean),
            cov,
            chol,
        })
    }

    /// `N(mean, scale · I)`.
    pub fn isotropic(mean: Vec<f64>, scale: f64) -> Result<Self> {
        let d = mean.len();
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = scale;
        }
        Self::new(mean, cov)
    }

    /// Maximum-likelihood fit to a weighted point set.
    pub fn fit(p: &EmpiricalDist) -> Result<Self> {
        let d = p.dim();
        let mean = p.mean();
        let mut cov = vec![0.0; d * d];
        for (x, w) in p.points().row_iter().zip(p.weights()) {
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += w * (x[i] - mean[i]) * (x[j] - mean[j]);
                }
            }
        }
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    /// Row-major covariance entries.
    pub fn cov(&self) -> Vec<f64> {
        self.cov.transpose().as_slice().to_vec()
    }

    fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..self.dim()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return shape_err(format!("point of width {} for a {}-dim gaussian", x.len(), self.dim()));
        }
        let diff = DVector::from_column_slice(x) - &self.mean;
        let z = self
            .chol
            .l()
            .solve_lower_triangular(&diff)
            .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
        let d = self.dim() as f64;
        Ok(-0.5 * (z.norm_squared() + self.log_det() + d * (2.0 * std::f64::consts::PI).ln()))
    }

    /// `m` i.i.d. draws `mean + L·z`, `z ~ N(0, I)`, `L Lᵀ = cov`, as a uniform empirical distribution.
    pub fn sample<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<EmpiricalDist> {
        if m == 0 {
            return Err(Error::Invalid("need at least one sample".into()));
        }
        let d = self.dim();
        let l = self.chol.l();
        let mut data = Vec::with_capacity(m * d);
        let mut z = vec![0.0; d];
        for _ in 0..m {
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            for i in 0..d {
                let mut acc = self.mean[i];
                for j in 0..=i {
                    acc += l[(i, j)] * z[j];
                }
                data.push(acc);
            }
        }
        EmpiricalDist::uniform(Tensor::matrix(m, d, data)?)
    }
}

/// `KL(g1 ‖ g2) = ½(tr(Σ₂⁻¹Σ₁) + (μ₂−μ₁)ᵀΣ₂⁻¹(μ₂−μ₁) − d + ln(det Σ₂ / det Σ₁))`.
pub fn gaussian_kl(g1: &GaussianDist, g2: &GaussianDist) -> Result<f64> {
    if g1.dim() != g2.dim() {
        return shape_err(format!("gaussians of dimension {} and {}", g1.dim(), g2.dim()));
    }
    let l2 = g2.chol.l();
    let m = l2
        .solve_lower_triangular(&g1.chol.l())
        .ok_or_else(|| Error::Numeric("singular covariance".into()))?;
    let trace = m.norm_squared();
    let diff = &g2.mean - &g1.mean;
    let z = l2
        .solve_lower_triangular(&diff)
        .ok_or_else(|| Error::Numeric("singular covariance".into()))?;
    let d = g1.dim() as f64;
    let kl = 0.5 * (trace + z.norm_squared() - d + g2.log_det() - g1.log_det());
    if !kl.is_finite() {
        return Err(Error::Numeric("gaussian KL is not finite".into()));
    }
    Ok(kl.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn g1d(mu: f64, var: f64) -> GaussianDist {
        GaussianDist::new(vec![mu], vec![var]).unwrap()
    }

    // Trapezoid rule on ∫ p ln(p/q) over ±12 standard deviations.
    fn kl_by_quadrature(p: &GaussianDist, q: &GaussianDist) -> f64 {
        let (mu, sd) = (p.mean()[0], p.cov()[0].sqrt());
        let (lo, hi) = (mu - 12.0 * sd, mu + 12.0 * sd);
        let n = 200_000;
        let h = (hi - lo) / n as f64;
        let f = |x: f64| {
            let lp = p.log_pdf(&[x]).unwrap();
            let lq = q.log_pdf(&[x]).unwrap();
            lp.exp() * (lp - lq)
        };
        let mut s = 0.5 * (f(lo) + f(hi));
        for i in 1..n {
            s += f(lo + i as f64 * h);
        }
        s * h
    }

    #[test]
    fn identical_gaussians_have_zero_kl() {
        let g = GaussianDist::new(vec![1.0, -2.0], vec![2.0, 0.3, 0.3, 1.0]).unwrap();
        assert_eq!(gaussian_kl(&g, &g).unwrap(), 0.0);
    }

    #[test]
    fn one_dimensional_values_match_quadrature() {
        let cases = [(g1d(0.0, 1.0), g1d(1.0, 1.0)), (g1d(0.0, 2.0), g1d(0.0, 1.0))];
        let oracle: Vec<f64> = cases.iter().map(|(p, q)| kl_by_quadrature(p, q)).collect();
        // Frozen from the quadrature above.
        assert!((oracle[0] - 0.5).abs() < 1e-9);
        assert!((oracle[1] - 0.153_426_409_720_027_3).abs() < 1e-9);
        for ((p, q), o) in cases.iter().zip(&oracle) {
            assert!((gaussian_kl(p, q).unwrap() - o).abs() < 1e-9);
        }
        assert!((gaussian_kl(&cases[1].0, &cases[1].1).unwrap() - 0.5 * (2.0 - 1.0 - 2f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_covariances() {
        assert!(matches!(
            GaussianDist::new(vec![0.0, 0.0], vec![1.0, 2.0, 2.0, 1.0]),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            GaussianDist::new(vec![0.0, 0.0], vec![1.0, 0.1, 0.2, 1.0]),
            Err(Error::Invalid(_))
        ));
        assert!(GaussianDist::new(vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn sampling_mean_and_weights() {
        let g = GaussianDist::isotropic(vec![0.0, 0.0], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = g.sample(10_000, &mut rng).unwrap();
        for m in p.mean() {
            assert!(m.abs() < 0.05, "{m}");
        }
        assert!(p.weights().iter().all(|&w| w == 1.0 / 10_000.0));
    }

    #[test]
    fn tiny_covariance_samples_sit_on_the_mean() {
        let g = GaussianDist::isotropic(vec![3.0, -1.0], 1e-12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = g.sample(100, &mut rng).unwrap();
        for x in p.points().row_iter() {
            assert!((x[0] - 3.0).abs() < 1e-5 && (x[1] + 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn fit_recovers_moments() {
        let g = GaussianDist::new(vec![1.0, 2.0], vec![0.5, 0.2, 0.2, 0.3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let fitted = GaussianDist::fit(&g.sample(50_000, &mut rng).unwrap()).unwrap();
        for (a, b) in fitted.cov().iter().zip(g.cov()) {
            assert!((a - b).abs() < 0.02);
        }
    }
}
