//! Gaussian mixtures with closed-form densities, scores, and noised
//! marginals.
//!
//! A mixture serves three roles at once: data distribution (sampling),
//! analytic score oracle (log-density gradient via log-sum-exp over
//! responsibilities), and forward-process marginal (noising a mixture by
//! `x_t = sqrt(abar) x_0 + sqrt(1-abar) eps` yields another mixture in
//! closed form). Covariances are handled through Cholesky factors; explicit
//! inverses never appear.

mod world;

pub use world::{build_world, DomainWorld, WorldLayout};

use crate::error::{CoreError, Result};
use crate::rng::SplitRng;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// One weighted Gaussian `weight * N(mean, cov)`.
#[derive(Debug, Clone)]
pub struct GaussianComponent {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    weight: f64,
    chol: Cholesky<f64, Dyn>,
    // -d/2 ln(2pi) - 1/2 ln det(cov), cached for density evaluations
    log_norm: f64,
}

impl GaussianComponent {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, weight: f64) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(CoreError::DimensionMismatch {
                expected: d,
                actual: cov.nrows(),
            });
        }
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(CoreError::invalid("weight", format!("{weight} is not a nonnegative finite value")));
        }
        let sym_err = (&cov - cov.transpose()).abs().max();
        if sym_err > 1e-12 {
            return Err(CoreError::invalid("cov", format!("not symmetric (max asymmetry {sym_err:.3e})")));
        }
        let chol = Cholesky::new(cov.clone()).ok_or(CoreError::NotPositiveDefinite)?;
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let log_norm = -0.5 * (d as f64) * LN_2PI - 0.5 * log_det;
        Ok(Self {
            mean,
            cov,
            weight,
            chol,
            log_norm,
        })
    }

    /// Isotropic helper: `weight * N(mean, sigma^2 I)`.
    pub fn isotropic(mean: DVector<f64>, sigma: f64, weight: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, DMatrix::identity(d, d) * (sigma * sigma), weight)
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// log N(x | mean, cov)
    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.mean;
        // Solve L y = diff; |y|^2 is the Mahalanobis distance squared.
        let y = self.chol.l().solve_lower_triangular(&diff).expect("chol L is invertible");
        self.log_norm - 0.5 * y.norm_squared()
    }

    /// Sigma^{-1} (mean - x), the gradient of log N at x.
    fn grad_log_density(&self, x: &DVector<f64>) -> DVector<f64> {
        let diff = &self.mean - x;
        self.chol.solve(&diff)
    }

    /// Mahalanobis distance from x to the component mean.
    pub fn mahalanobis(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.mean;
        let y = self.chol.l().solve_lower_triangular(&diff).expect("chol L is invertible");
        y.norm()
    }

    fn sample_into(&self, rng: &mut SplitRng) -> DVector<f64> {
        let z = rng.normal_vector(self.mean.len());
        &self.mean + self.chol.l() * z
    }
}

/// Finite mixture of Gaussians over R^d with weights summing to one.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    components: Vec<GaussianComponent>,
    dim: usize,
}

impl GaussianMixture {
    /// Build a mixture. Zero-weight components are dropped; the remaining
    /// weights must sum to 1 within 1e-12.
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        let components: Vec<_> = components.into_iter().filter(|c| c.weight > 0.0).collect();
        if components.is_empty() {
            return Err(CoreError::invalid("components", "mixture needs at least one positive-weight component"));
        }
        let dim = components[0].mean.len();
        for c in &components {
            if c.mean.len() != dim {
                return Err(CoreError::DimensionMismatch {
                    expected: dim,
                    actual: c.mean.len(),
                });
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(CoreError::invalid("weights", format!("sum to {total}, expected 1")));
        }
        Ok(Self { components, dim })
    }

    /// Build from components whose weights are rescaled to sum to one.
    pub fn normalized(components: Vec<GaussianComponent>) -> Result<Self> {
        let total: f64 = components.iter().filter(|c| c.weight > 0.0).map(|c| c.weight).sum();
        if total <= 0.0 {
            return Err(CoreError::invalid("weights", "total weight must be positive"));
        }
        let rescaled = components
            .into_iter()
            .map(|c| {
                GaussianComponent::new(c.mean, c.cov, c.weight / total)
                    .expect("component was already valid")
            })
            .collect();
        Self::new(rescaled)
    }

    /// Single standard normal N(0, I) in d dimensions.
    pub fn standard_normal(dim: usize) -> Self {
        let c = GaussianComponent::isotropic(DVector::zeros(dim), 1.0, 1.0).expect("valid");
        Self::new(vec![c]).expect("valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// p(x) = sum_i w_i N(x | mu_i, Sigma_i)
    pub fn density(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.log_density_and_score(x)?.0.exp())
    }

    /// (log p(x), grad log p(x)), evaluated with log-sum-exp responsibilities.
    pub fn log_density_and_score(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        self.check_dim(x)?;
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + c.log_density(x))
            .collect();
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            // Every component underflowed even in log space; only possible
            // for pathological inputs (e.g. x with infinities).
            return Ok((f64::NEG_INFINITY, DVector::zeros(self.dim)));
        }
        let sum_exp: f64 = logs.iter().map(|l| (l - m).exp()).sum();
        let log_p = m + sum_exp.ln();
        let mut score = DVector::zeros(self.dim);
        for (c, l) in self.components.iter().zip(&logs) {
            let r = (l - log_p).exp();
            if r > 0.0 {
                score += c.grad_log_density(x) * r;
            }
        }
        Ok((log_p, score))
    }

    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.log_density_and_score(x)?.0)
    }

    pub fn score(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.log_density_and_score(x)?.1)
    }

    /// Exact marginal of `x_t = sqrt(abar) x_0 + sqrt(1-abar) eps` when
    /// `x_0` follows this mixture: component means scale by sqrt(abar),
    /// covariances become `abar * Sigma + (1-abar) I`.
    pub fn noised_marginal(&self, abar: f64) -> Result<GaussianMixture> {
        if !(abar > 0.0 && abar <= 1.0) {
            return Err(CoreError::invalid("abar", format!("{abar} outside (0, 1]")));
        }
        let sqrt_a = abar.sqrt();
        let noise = 1.0 - abar;
        let eye = DMatrix::identity(self.dim, self.dim);
        let comps = self
            .components
            .iter()
            .map(|c| {
                GaussianComponent::new(&c.mean * sqrt_a, &c.cov * abar + &eye * noise, c.weight)
            })
            .collect::<Result<Vec<_>>>()?;
        GaussianMixture::new(comps)
    }

    /// i.i.d. draws; deterministic given the stream.
    pub fn sample(&self, n: usize, rng: &mut SplitRng) -> Vec<DVector<f64>> {
        self.sample_indexed(n, rng).0
    }

    /// Draws plus the index of the component each came from.
    pub fn sample_indexed(&self, n: usize, rng: &mut SplitRng) -> (Vec<DVector<f64>>, Vec<usize>) {
        let weights: Vec<f64> = self.components.iter().map(|c| c.weight).collect();
        let mut points = Vec::with_capacity(n);
        let mut idx = Vec::with_capacity(n);
        for _ in 0..n {
            let k = rng.categorical(&weights);
            points.push(self.components[k].sample_into(rng));
            idx.push(k);
        }
        (points, idx)
    }

    /// Closed-form mixture mean and covariance.
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let mut mean = DVector::zeros(self.dim);
        for c in &self.components {
            mean += &c.mean * c.weight;
        }
        let mut cov = DMatrix::zeros(self.dim, self.dim);
        for c in &self.components {
            let d = &c.mean - &mean;
            cov += (&c.cov + &d * d.transpose()) * c.weight;
        }
        (mean, cov)
    }
}

/// Flat serialization form: matrices as row-major arrays, full float
/// precision preserved by the JSON encoder's shortest-round-trip floats.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureFile {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covs_row_major: Vec<Vec<f64>>,
}

impl MixtureFile {
    pub fn from_mixture(mix: &GaussianMixture) -> Self {
        Self {
            dim: mix.dim,
            weights: mix.components.iter().map(|c| c.weight).collect(),
            means: mix
                .components
                .iter()
                .map(|c| c.mean.iter().cloned().collect())
                .collect(),
            covs_row_major: mix
                .components
                .iter()
                .map(|c| c.cov.transpose().as_slice().to_vec())
                .collect(),
        }
    }

    pub fn into_mixture(self) -> Result<GaussianMixture> {
        let d = self.dim;
        let mut comps = Vec::with_capacity(self.weights.len());
        for ((w, m), cv) in self
            .weights
            .iter()
            .zip(self.means.iter())
            .zip(self.covs_row_major.iter())
        {
            if m.len() != d || cv.len() != d * d {
                return Err(CoreError::DimensionMismatch {
                    expected: d,
                    actual: m.len(),
                });
            }
            let mean = DVector::from_column_slice(m);
            let cov = DMatrix::from_row_slice(d, d, cv);
            comps.push(GaussianComponent::new(mean, cov, *w)?);
        }
        GaussianMixture::new(comps)
    }
}
