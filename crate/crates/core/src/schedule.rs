//! Noise schedule, forward noising, and the eps/score dictionary.
//!
//! Timesteps are 1-based: t in 1..=T indexes the noisy marginals, t = 0
//! means clean data. `abar` is the running product of (1 - beta).

use crate::error::{CoreError, Result};
use nalgebra::DVector;

#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    abar: Vec<f64>,
    bbar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear beta schedule from `beta_start` to `beta_end` over T steps.
    pub fn linear(t_count: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_count == 0 {
            return Err(CoreError::invalid("T", "need at least one timestep"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(CoreError::invalid(
                "beta",
                format!("need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"),
            ));
        }
        let mut beta = Vec::with_capacity(t_count);
        for i in 0..t_count {
            let frac = if t_count == 1 {
                0.0
            } else {
                i as f64 / (t_count - 1) as f64
            };
            beta.push(beta_start + (beta_end - beta_start) * frac);
        }
        let mut abar = Vec::with_capacity(t_count);
        let mut prod = 1.0;
        for b in &beta {
            prod *= 1.0 - b;
            abar.push(prod);
        }
        let bbar = abar.iter().map(|a| 1.0 - a).collect();
        Ok(Self { beta, abar, bbar })
    }

    /// Canonical defaults: T = 1000, beta linear 1e-4 -> 0.02.
    pub fn default_linear() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("default constants are valid")
    }

    pub fn timesteps(&self) -> usize {
        self.beta.len()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.beta.len() {
            return Err(CoreError::TimestepOutOfRange {
                t,
                max: self.beta.len(),
            });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.beta[t - 1])
    }

    /// Cumulative product of (1 - beta) through step t.
    pub fn abar(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.abar[t - 1])
    }

    /// 1 - abar_t, stored so the pair sums to one exactly.
    pub fn bbar(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.bbar[t - 1])
    }

    /// The 1-based timestep whose abar is closest to the requested value.
    pub fn timestep_for_abar(&self, target: f64) -> usize {
        let mut best = 1;
        let mut best_err = f64::INFINITY;
        for (i, a) in self.abar.iter().enumerate() {
            let err = (a - target).abs();
            if err < best_err {
                best_err = err;
                best = i + 1;
            }
        }
        best
    }

    /// Cheap identity string for checkpoint headers.
    pub fn fingerprint(&self) -> String {
        format!(
            "linear:T={}:b0={:e}:b1={:e}",
            self.beta.len(),
            self.beta[0],
            self.beta[self.beta.len() - 1]
        )
    }
}

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
pub fn forward_noise(x0: &DVector<f64>, abar_t: f64, eps: &DVector<f64>) -> DVector<f64> {
    x0 * abar_t.sqrt() + eps * (1.0 - abar_t).sqrt()
}

/// score = -eps / sqrt(1 - abar_t)
pub fn eps_to_score(eps: &DVector<f64>, abar_t: f64) -> Result<DVector<f64>> {
    if !(abar_t > 0.0 && abar_t < 1.0) {
        return Err(CoreError::invalid("abar_t", format!("{abar_t} outside (0, 1)")));
    }
    Ok(eps * (-1.0 / (1.0 - abar_t).sqrt()))
}

/// eps = -sqrt(1 - abar_t) * score
pub fn score_to_eps(score: &DVector<f64>, abar_t: f64) -> Result<DVector<f64>> {
    if !(abar_t > 0.0 && abar_t < 1.0) {
        return Err(CoreError::invalid("abar_t", format!("{abar_t} outside (0, 1)")));
    }
    Ok(score * (-(1.0 - abar_t).sqrt()))
}

/// Uniformly strided decreasing timestep subsequence: starts at T, ends at
/// 1 (a single step uses just [T]).
pub fn timestep_subsequence(t_count: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 {
        return Err(CoreError::invalid("steps", "need at least one step"));
    }
    if steps > t_count {
        return Err(CoreError::invalid(
            "steps",
            format!("{steps} exceeds timestep count {t_count}"),
        ));
    }
    if steps == 1 {
        return Ok(vec![t_count]);
    }
    let mut ts = Vec::with_capacity(steps);
    for j in 0..steps {
        let frac = (steps - 1 - j) as f64 / (steps - 1) as f64;
        let t = 1 + ((t_count - 1) as f64 * frac).round() as usize;
        ts.push(t);
    }
    Ok(ts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear(1, 0.1, 0.1).unwrap();
        assert_relative_eq!(s.abar(1).unwrap(), 0.9, max_relative = 1e-15);
    }

    #[test]
    fn default_schedule_terminal_abar() {
        // Direct product over the linear betas as the oracle.
        let s = NoiseSchedule::default_linear();
        let mut prod = 1.0;
        for i in 0..1000 {
            let b = 1e-4 + (0.02 - 1e-4) * (i as f64 / 999.0);
            prod *= 1.0 - b;
        }
        assert_relative_eq!(s.abar(1000).unwrap(), prod, max_relative = 1e-12);
        assert_relative_eq!(s.abar(1000).unwrap(), 4.04e-5, max_relative = 2e-3);
    }

    #[test]
    fn abar_strictly_decreasing_and_recomputable() {
        let s = NoiseSchedule::linear(500, 5e-4, 0.05).unwrap();
        let mut prod = 1.0;
        for t in 1..=500 {
            prod *= 1.0 - s.beta(t).unwrap();
            assert!((s.abar(t).unwrap() - prod).abs() < 1e-12);
            if t > 1 {
                assert!(s.abar(t).unwrap() < s.abar(t - 1).unwrap());
            }
            // bbar + abar == 1 exactly as stored
            assert_eq!(s.bbar(t).unwrap() + s.abar(t).unwrap(), 1.0);
        }
        assert!(s.abar(500).unwrap() > 0.0 && s.abar(1).unwrap() < 1.0);
    }

    #[test]
    fn schedule_rejects_bad_parameters() {
        assert!(NoiseSchedule::linear(0, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.05, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.5, 1.0).is_err());
    }

    #[test]
    fn forward_noise_formula() {
        let x0 = DVector::from_column_slice(&[1.0, 0.0]);
        let zero = DVector::zeros(2);
        let out = forward_noise(&x0, 0.49, &zero);
        assert_relative_eq!(out[0], 0.7, max_relative = 1e-15);

        let id = forward_noise(&x0, 1.0, &DVector::from_column_slice(&[3.0, -2.0]));
        assert_eq!(id, x0);

        let eps = DVector::from_column_slice(&[0.0, 2.0]);
        let out = forward_noise(&x0, 0.25, &eps);
        assert_relative_eq!(out[0], 0.5, max_relative = 1e-15);
        assert_relative_eq!(out[1], 3.0_f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn eps_score_round_trip() {
        let eps = DVector::from_column_slice(&[0.3, -1.2]);
        let abar = 0.37;
        let s = eps_to_score(&eps, abar).unwrap();
        let back = score_to_eps(&s, abar).unwrap();
        for k in 0..2 {
            assert_relative_eq!(back[k], eps[k], max_relative = 1e-15);
        }
        let zero = eps_to_score(&DVector::zeros(2), 0.5).unwrap();
        assert_eq!(zero.norm(), 0.0);
        assert!(eps_to_score(&eps, 1.0).is_err());
    }

    #[test]
    fn subsequence_shapes() {
        let full = timestep_subsequence(10, 10).unwrap();
        assert_eq!(full, vec![10, 9, 8, 7, 6, 5, 4, 3, 2, 1]);

        let ts = timestep_subsequence(1000, 20).unwrap();
        assert_eq!(ts.len(), 20);
        assert_eq!(ts[0], 1000);
        assert_eq!(*ts.last().unwrap(), 1);
        for w in ts.windows(2) {
            let gap = w[0] - w[1];
            assert!((49..=56).contains(&gap), "gap {gap} not near uniform");
        }

        assert_eq!(timestep_subsequence(1000, 1).unwrap(), vec![1000]);
        assert!(timestep_subsequence(10, 11).is_err());
    }
}
