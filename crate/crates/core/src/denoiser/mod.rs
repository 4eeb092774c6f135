//! Noise predictors: the abstract role, an exact oracle backed by mixture
//! scores, and a small trainable MLP.
//!
//! Every denoiser maps `(x, t, class)` to an eps-prediction. Evaluation is
//! pure: the same inputs give the same output bits.

mod checkpoint;
mod mlp;
mod train;

pub use checkpoint::{load_checkpoint, require_architecture, save_checkpoint, CheckpointHeader};
pub use mlp::{MlpConfig, MlpDenoiser, MlpParams, Parameterization};
pub use train::{
    draw_batch, grad_on_items, loss_on_items, train, MixtureData, TrainConfig, TrainItem,
    TrainOutcome,
};

use crate::error::{CoreError, Result};
use crate::gmm::GaussianMixture;
use crate::schedule::{score_to_eps, NoiseSchedule};
use nalgebra::DVector;
use std::sync::OnceLock;

/// Eps-prediction interface shared by learned and oracle models.
pub trait Denoiser: Send + Sync {
    fn dim(&self) -> usize;
    fn timesteps(&self) -> usize;
    /// Predicted noise at state `x`, timestep `t` (1-based), and optional
    /// class condition. `None` selects the unconditional path.
    fn eps(&self, x: &DVector<f64>, t: usize, class: Option<usize>) -> Result<DVector<f64>>;
}

/// Sinusoidal time embedding: interleaved (sin(t/w_k), cos(t/w_k)) pairs
/// with frequencies spanning [1, 10^4] geometrically.
pub fn time_embedding(t: usize, dim: usize) -> Result<DVector<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(CoreError::invalid("dim", format!("{dim} is not a positive even number")));
    }
    let half = dim / 2;
    let mut v = DVector::zeros(dim);
    for k in 0..half {
        let omega = if half == 1 {
            1.0
        } else {
            1e4_f64.powf(k as f64 / (half - 1) as f64)
        };
        let a = t as f64 / omega;
        v[2 * k] = a.sin();
        v[2 * k + 1] = a.cos();
    }
    Ok(v)
}

/// Exact denoiser wrapping analytic mixture scores: eps(x, t) =
/// -sqrt(1 - abar_t) * score of the noised marginal at x. Class conditions
/// select per-class mixtures when provided.
pub struct OracleDenoiser {
    base: GaussianMixture,
    class_mixtures: Vec<GaussianMixture>,
    schedule: NoiseSchedule,
    noised_base: Vec<OnceLock<GaussianMixture>>,
    noised_class: Vec<Vec<OnceLock<GaussianMixture>>>,
}

impl OracleDenoiser {
    pub fn unconditional(base: GaussianMixture, schedule: NoiseSchedule) -> Self {
        Self::with_classes(base, Vec::new(), schedule)
    }

    pub fn with_classes(
        base: GaussianMixture,
        class_mixtures: Vec<GaussianMixture>,
        schedule: NoiseSchedule,
    ) -> Self {
        let t_count = schedule.timesteps();
        let noised_base = (0..t_count).map(|_| OnceLock::new()).collect();
        let noised_class = class_mixtures
            .iter()
            .map(|_| (0..t_count).map(|_| OnceLock::new()).collect())
            .collect();
        Self {
            base,
            class_mixtures,
            schedule,
            noised_base,
            noised_class,
        }
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn noised(&self, t: usize, class: Option<usize>) -> Result<&GaussianMixture> {
        let abar = self.schedule.abar(t)?;
        match class {
            None => Ok(self.noised_base[t - 1].get_or_init(|| {
                self.base.noised_marginal(abar).expect("abar validated by schedule")
            })),
            Some(c) => {
                if c >= self.class_mixtures.len() {
                    return Err(CoreError::UnknownClass {
                        class: c,
                        count: self.class_mixtures.len(),
                    });
                }
                Ok(self.noised_class[c][t - 1].get_or_init(|| {
                    self.class_mixtures[c]
                        .noised_marginal(abar)
                        .expect("abar validated by schedule")
                }))
            }
        }
    }
}

impl Denoiser for OracleDenoiser {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn timesteps(&self) -> usize {
        self.schedule.timesteps()
    }

    fn eps(&self, x: &DVector<f64>, t: usize, class: Option<usize>) -> Result<DVector<f64>> {
        let mix = self.noised(t, class)?;
        let (_, score) = mix.log_density_and_score(x)?;
        score_to_eps(&score, self.schedule.abar(t)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::rng::SplitRng;

    #[test]
    fn time_embedding_at_zero() {
        let e = time_embedding(0, 8).unwrap();
        for k in 0..4 {
            assert_eq!(e[2 * k], 0.0);
            assert_eq!(e[2 * k + 1], 1.0);
        }
        let e2 = time_embedding(0, 2).unwrap();
        assert_eq!(e2.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn time_embedding_rejects_odd_dim() {
        assert!(time_embedding(3, 7).is_err());
        assert!(time_embedding(3, 0).is_err());
    }

    #[test]
    fn time_embeddings_distinct_over_schedule() {
        let dim = 64;
        let mut seen: Vec<DVector<f64>> = Vec::new();
        for t in 1..=1000 {
            let e = time_embedding(t, dim).unwrap();
            for prev in &seen {
                assert!((prev - &e).abs().max() > 0.0, "duplicate embedding at t={t}");
            }
            seen.push(e);
        }
    }

    #[test]
    fn oracle_on_standard_normal_matches_closed_form() {
        // Noised marginal of N(0, I) is N(0, I) for every t, so
        // eps(x, t) = sqrt(1 - abar_t) * x.
        let schedule = NoiseSchedule::default_linear();
        let oracle = OracleDenoiser::unconditional(GaussianMixture::standard_normal(2), schedule.clone());
        let mut rng = SplitRng::new(8);
        for _ in 0..20 {
            let t = 1 + rng.below(1000);
            let x = rng.normal_vector(2);
            let eps = oracle.eps(&x, t, None).unwrap();
            let scale = (1.0 - schedule.abar(t).unwrap()).sqrt();
            for k in 0..2 {
                assert_relative_eq!(eps[k], scale * x[k], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn oracle_satisfies_eps_score_identity() {
        use crate::gmm::GaussianComponent;
        let comps = vec![
            GaussianComponent::isotropic(DVector::from_column_slice(&[-0.4, 0.2]), 0.3, 0.5).unwrap(),
            GaussianComponent::isotropic(DVector::from_column_slice(&[0.6, -0.1]), 0.5, 0.5).unwrap(),
        ];
        let mix = GaussianMixture::new(comps).unwrap();
        let schedule = NoiseSchedule::default_linear();
        let oracle = OracleDenoiser::unconditional(mix.clone(), schedule.clone());
        let mut rng = SplitRng::new(13);
        for _ in 0..100 {
            let t = 1 + rng.below(1000);
            let abar = schedule.abar(t).unwrap();
            let x = rng.normal_vector(2);
            let eps = oracle.eps(&x, t, None).unwrap();
            let score = mix.noised_marginal(abar).unwrap().score(&x).unwrap();
            let expected = score * (-(1.0 - abar).sqrt());
            assert!((eps - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn oracle_rejects_bad_inputs() {
        let oracle = OracleDenoiser::unconditional(
            GaussianMixture::standard_normal(2),
            NoiseSchedule::default_linear(),
        );
        let x = DVector::zeros(2);
        assert!(oracle.eps(&x, 0, None).is_err());
        assert!(oracle.eps(&x, 1001, None).is_err());
        assert!(oracle.eps(&x, 5, Some(0)).is_err());
    }

    #[test]
    fn oracle_eval_is_pure() {
        let oracle = OracleDenoiser::unconditional(
            GaussianMixture::standard_normal(2),
            NoiseSchedule::default_linear(),
        );
        let x = DVector::from_column_slice(&[0.3, -0.8]);
        let a = oracle.eps(&x, 500, None).unwrap();
        let b = oracle.eps(&x, 500, None).unwrap();
        assert_eq!(a, b);
    }
}
