//! Cross-module consistency: empirical forward noising of mixture samples
//! must match the closed-form noised marginals, and analytic scores must
//! match finite differences of the noised log densities.

use dog_core::gmm::{GaussianComponent, GaussianMixture};
use dog_core::rng::SplitRng;
use dog_core::schedule::forward_noise;
use nalgebra::{DMatrix, DVector};

fn vec2(a: f64, b: f64) -> DVector<f64> {
    DVector::from_column_slice(&[a, b])
}

fn test_mixture() -> GaussianMixture {
    let comps = vec![
        GaussianComponent::isotropic(vec2(-0.8, 0.4), 0.3, 0.25).unwrap(),
        GaussianComponent::new(
            vec2(0.6, -0.2),
            DMatrix::from_row_slice(2, 2, &[0.2, 0.05, 0.05, 0.4]),
            0.45,
        )
        .unwrap(),
        GaussianComponent::isotropic(vec2(0.1, 0.9), 0.5, 0.3).unwrap(),
    ];
    GaussianMixture::new(comps).unwrap()
}

fn empirical_moments(points: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = points.len() as f64;
    let mut mean = DVector::zeros(2);
    for p in points {
        mean += p;
    }
    mean /= n;
    let mut cov = DMatrix::zeros(2, 2);
    for p in points {
        let d = p - &mean;
        cov += &d * d.transpose();
    }
    cov /= n;
    (mean, cov)
}

#[test]
fn monte_carlo_forward_noising_matches_analytic_marginal() {
    let mix = test_mixture();
    let n = 60_000;
    for (case, &abar) in [1.0, 0.9, 0.5, 0.1].iter().enumerate() {
        let mut rng = SplitRng::new(1000 + case as u64);
        let x0 = mix.sample(n, &mut rng);
        let noised: Vec<DVector<f64>> = x0
            .iter()
            .map(|x| {
                let eps = rng.normal_vector(2);
                forward_noise(x, abar, &eps)
            })
            .collect();
        let (emp_mean, emp_cov) = empirical_moments(&noised);
        let (ana_mean, ana_cov) = mix.noised_marginal(abar).unwrap().moments();

        // 3-sigma tolerances from the CLT: mean se ~ sqrt(var/n),
        // covariance entry se ~ sqrt(2) var / sqrt(n), padded for the
        // mixture's non-Gaussian fourth moments.
        for k in 0..2 {
            let se = (ana_cov[(k, k)] / n as f64).sqrt();
            assert!(
                (emp_mean[k] - ana_mean[k]).abs() < 3.0 * se + 1e-12,
                "abar={abar} mean[{k}]: {} vs {}",
                emp_mean[k],
                ana_mean[k]
            );
        }
        for i in 0..2 {
            for j in 0..2 {
                let scale = (ana_cov[(i, i)] * ana_cov[(j, j)]).sqrt();
                let se = 2.0 * scale / (n as f64).sqrt();
                assert!(
                    (emp_cov[(i, j)] - ana_cov[(i, j)]).abs() < 3.0 * se,
                    "abar={abar} cov[{i},{j}]: {} vs {}",
                    emp_cov[(i, j)],
                    ana_cov[(i, j)]
                );
            }
        }
    }
}

#[test]
fn noised_marginal_scores_match_finite_differences() {
    let mix = test_mixture();
    let mut rng = SplitRng::new(77);
    let h = 1e-6;
    for trial in 0..100 {
        let abar = rng.uniform(0.05, 1.0);
        let noised = mix.noised_marginal(abar).unwrap();
        let x = vec2(rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0));
        let (_, score) = noised.log_density_and_score(&x).unwrap();
        for k in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd =
                (noised.log_density(&xp).unwrap() - noised.log_density(&xm).unwrap()) / (2.0 * h);
            let denom = score[k].abs().max(fd.abs()).max(1e-3);
            assert!(
                ((score[k] - fd) / denom).abs() < 1e-6,
                "trial {trial} coord {k}: score {} vs fd {}",
                score[k],
                fd
            );
        }
    }
}
