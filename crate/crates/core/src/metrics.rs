//! Sample-set metrics at 2-D scale: Gaussian Fréchet distance, domain
//! alignment rate, k-NN precision/recall, target log-likelihood, and the
//! finite-sample marginal-error Monte Carlo harness.

use crate::error::{CoreError, Result};
use crate::gmm::{DomainWorld, GaussianMixture};
use crate::rng::SplitRng;
use crate::schedule::NoiseSchedule;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Summary of one generated sample set against a world.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub frechet2: f64,
    pub in_domain_rate: f64,
    pub precision: f64,
    pub recall: f64,
    pub mean_target_loglik: f64,
    pub sample_count: usize,
    pub config_fingerprint: String,
}

impl MetricsReport {
    /// Flat `name\tvalue` lines for aggregation.
    pub fn machine_lines(&self) -> Vec<String> {
        vec![
            format!("frechet2\t{}", self.frechet2),
            format!("in_domain_rate\t{}", self.in_domain_rate),
            format!("precision\t{}", self.precision),
            format!("recall\t{}", self.recall),
            format!("mean_target_loglik\t{}", self.mean_target_loglik),
            format!("sample_count\t{}", self.sample_count),
        ]
    }

    pub fn human_summary(&self) -> String {
        format!(
            "frechet2 {:.6}  in_domain {:.4}  precision {:.4}  recall {:.4}  mean_loglik {:.4}  (n = {})",
            self.frechet2,
            self.in_domain_rate,
            self.precision,
            self.recall,
            self.mean_target_loglik,
            self.sample_count
        )
    }
}

fn sample_moments(points: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let d = points[0].len();
    let n = points.len() as f64;
    let mut mean = DVector::zeros(d);
    for p in points {
        mean += p;
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for p in points {
        let diff = p - &mean;
        cov += &diff * diff.transpose();
    }
    cov /= n;
    (mean, cov)
}

/// Symmetric PSD square root via eigendecomposition, clamping tiny
/// negative eigenvalues from roundoff.
fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (k, val) in eig.eigenvalues.iter().enumerate() {
        let root = val.max(0.0).sqrt();
        let v = eig.eigenvectors.column(k);
        out += v * v.transpose() * root;
    }
    out
}

/// Fréchet distance between Gaussian fits of two point clouds:
/// |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2).
/// A 1e-9 ridge keeps degenerate covariances from failing.
pub fn frechet_gaussian(a: &[DVector<f64>], b: &[DVector<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(CoreError::EmptyBatch);
    }
    let d = a[0].len();
    if b[0].len() != d {
        return Err(CoreError::DimensionMismatch {
            expected: d,
            actual: b[0].len(),
        });
    }
    if a.len() <= d || b.len() <= d {
        return Err(CoreError::invalid("samples", format!("need more than {d} points per set")));
    }
    let (ma, mut ca) = sample_moments(a);
    let (mb, mut cb) = sample_moments(b);
    let ridge = DMatrix::identity(d, d) * 1e-9;
    ca += &ridge;
    cb += &ridge;

    let sa = sym_sqrt(&ca);
    let inner = &sa * &cb * &sa;
    let cross = sym_sqrt(&inner);
    let mean_term = (ma - mb).norm_squared();
    let trace_term = ca.trace() + cb.trace() - 2.0 * cross.trace();
    // Clamp roundoff: the true value is nonnegative.
    Ok((mean_term + trace_term).max(0.0))
}

/// Fraction of samples within `radius_sigmas` Mahalanobis units of the
/// nearest target mode, each mode measured under its own covariance.
pub fn in_domain_rate(
    samples: &[DVector<f64>],
    world: &DomainWorld,
    radius_sigmas: f64,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(CoreError::EmptyBatch);
    }
    if !(radius_sigmas > 0.0) {
        return Err(CoreError::invalid("radius_sigmas", "must be positive"));
    }
    let modes: Vec<_> = world
        .target_mode_indices()
        .iter()
        .map(|&i| &world.source().components()[i])
        .collect();
    let mut inside = 0usize;
    for s in samples {
        let nearest = modes
            .iter()
            .map(|m| m.mahalanobis(s))
            .fold(f64::INFINITY, f64::min);
        if nearest <= radius_sigmas {
            inside += 1;
        }
    }
    Ok(inside as f64 / samples.len() as f64)
}

/// Improved-style k-NN precision/recall. A point lies on a set's manifold
/// if it falls within the k-th nearest-neighbour radius of some point of
/// that set (self excluded). Precision checks generated points against the
/// real manifold; recall swaps the roles. Plain O(n^2); the brute force is
/// the definition.
pub fn knn_precision_recall(
    generated: &[DVector<f64>],
    real: &[DVector<f64>],
    k: usize,
) -> Result<(f64, f64)> {
    if generated.is_empty() || real.is_empty() {
        return Err(CoreError::EmptyBatch);
    }
    if k == 0 || k >= generated.len() || k >= real.len() {
        return Err(CoreError::invalid("k", format!("k = {k} must be in 1..set size")));
    }
    let coverage = |queries: &[DVector<f64>], manifold: &[DVector<f64>]| -> f64 {
        let radii = knn_radii(manifold, k);
        let mut hits = 0usize;
        for q in queries {
            let found = manifold
                .iter()
                .zip(&radii)
                .any(|(m, r)| (q - m).norm() <= *r);
            if found {
                hits += 1;
            }
        }
        hits as f64 / queries.len() as f64
    };
    Ok((coverage(generated, real), coverage(real, generated)))
}

fn knn_radii(points: &[DVector<f64>], k: usize) -> Vec<f64> {
    let n = points.len();
    let mut radii = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n - 1);
    for i in 0..n {
        dists.clear();
        for j in 0..n {
            if i != j {
                dists.push((&points[i] - &points[j]).norm());
            }
        }
        dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        radii.push(dists[k - 1]);
    }
    radii
}

/// Mean log density of the clean target mixture over the samples.
pub fn mean_target_loglik(samples: &[DVector<f64>], world: &DomainWorld) -> Result<f64> {
    if samples.is_empty() {
        return Err(CoreError::EmptyBatch);
    }
    let target = world.target_mixture();
    let mut total = 0.0;
    for s in samples {
        total += target.log_density(s)?;
    }
    Ok(total / samples.len() as f64)
}

/// Output of the finite-sample marginal-error harness.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Theorem1Estimate {
    pub grid_point: Vec<f64>,
    /// Monte Carlo estimate of E_D |p_hat_t(x) - p*_t(x)|.
    pub estimate: f64,
    /// Standard error of the estimate over the M dataset draws.
    pub std_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub n: usize,
    pub m: usize,
    pub abar: f64,
    pub bound: f64,
    pub estimates: Vec<Theorem1Estimate>,
    /// Set when the kernel-density precondition bbar >= 1/(2 pi) fails.
    pub warning: Option<String>,
    /// Set when M is too small for a meaningful standard error.
    pub low_confidence: bool,
}

impl Theorem1Report {
    /// Largest estimate over the grid.
    pub fn max_estimate(&self) -> f64 {
        self.estimates.iter().map(|e| e.estimate).fold(0.0, f64::max)
    }

    /// True when every grid estimate respects the 1/sqrt(N) bound with
    /// `slack_sigmas` standard errors of slack.
    pub fn bound_respected(&self, slack_sigmas: f64) -> bool {
        self.estimates
            .iter()
            .all(|e| e.estimate <= self.bound + slack_sigmas * e.std_error)
    }
}

/// Estimate E_D |p_hat_t(x) - p*_t(x)| over M datasets of N draws from
/// `base`, at the grid points, against the exact noised marginal.
/// p_hat_t is the empirical forward kernel mixture
/// (1/N) sum_i N(x | sqrt(abar) y_i, (1-abar) I).
pub fn theorem1_mc(
    base: &GaussianMixture,
    schedule: &NoiseSchedule,
    t: usize,
    n: usize,
    m: usize,
    grid: &[DVector<f64>],
    seed: u64,
) -> Result<Theorem1Report> {
    if n == 0 || m == 0 {
        return Err(CoreError::invalid("n/m", "need N >= 1 dataset size and M >= 1 draws"));
    }
    if grid.is_empty() {
        return Err(CoreError::invalid("grid", "need at least one grid point"));
    }
    let abar = schedule.abar(t)?;
    let bbar = 1.0 - abar;
    let d = base.dim();
    let warning = if (2.0 * std::f64::consts::PI * bbar).powi(d as i32) < 1.0 {
        Some(format!(
            "bbar = {bbar:.6} below 1/(2 pi): kernel density exceeds 1 pointwise, the bound's premise fails"
        ))
    } else {
        None
    };

    let truth = base.noised_marginal(abar)?;
    let p_true: Vec<f64> = grid
        .iter()
        .map(|x| truth.density(x))
        .collect::<Result<Vec<_>>>()?;

    let sqrt_a = abar.sqrt();
    let log_norm = -(d as f64) / 2.0 * (2.0 * std::f64::consts::PI * bbar).ln();
    let root = SplitRng::new(seed);
    let mut sum = vec![0.0; grid.len()];
    let mut sum_sq = vec![0.0; grid.len()];

    for draw in 0..m {
        let mut rng = root.derive(draw as u64);
        let data = base.sample(n, &mut rng);
        for (gi, x) in grid.iter().enumerate() {
            let mut p_hat = 0.0;
            for y in &data {
                let dist2 = (x - y * sqrt_a).norm_squared();
                p_hat += (log_norm - dist2 / (2.0 * bbar)).exp();
            }
            p_hat /= n as f64;
            let err = (p_hat - p_true[gi]).abs();
            sum[gi] += err;
            sum_sq[gi] += err * err;
        }
    }

    let estimates = grid
        .iter()
        .enumerate()
        .map(|(gi, x)| {
            let mean = sum[gi] / m as f64;
            let var = (sum_sq[gi] / m as f64 - mean * mean).max(0.0);
            let std_error = if m > 1 {
                (var / (m - 1) as f64).sqrt()
            } else {
                0.0
            };
            Theorem1Estimate {
                grid_point: x.iter().cloned().collect(),
                estimate: mean,
                std_error,
            }
        })
        .collect();

    Ok(Theorem1Report {
        n,
        m,
        abar,
        bound: 1.0 / (n as f64).sqrt(),
        estimates,
        warning,
        low_confidence: m < 30,
    })
}

/// Evenly spaced square grid over [lo, hi]^2.
pub fn square_grid(lo: f64, hi: f64, per_axis: usize) -> Vec<DVector<f64>> {
    let coord = |i: usize| {
        if per_axis == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (per_axis - 1) as f64
        }
    };
    let mut grid = Vec::with_capacity(per_axis * per_axis);
    for i in 0..per_axis {
        for j in 0..per_axis {
            grid.push(DVector::from_column_slice(&[coord(i), coord(j)]));
        }
    }
    grid
}
