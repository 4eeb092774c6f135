//! Deterministic DDIM reverse sampling over a guided denoiser.
//!
//! Chains draw their initial state from N(0, I) on per-chain substreams of
//! the master seed, then follow the eta = 0 DDIM update along a uniformly
//! strided timestep subsequence. The terminal transition projects straight
//! to the clean estimate (abar treated as 1 past the last timestep).

use crate::error::{CoreError, Result};
use crate::guidance::GuidanceSpec;
use crate::rng::SplitRng;
use crate::schedule::{timestep_subsequence, NoiseSchedule};
use nalgebra::DVector;

/// One recorded chain: (timestep, state) pairs from x_T down to the clean
/// sample at t = 0.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub chain: usize,
    pub states: Vec<(usize, DVector<f64>)>,
    pub seed: u64,
    pub guidance: String,
}

impl Trajectory {
    pub fn terminal(&self) -> &DVector<f64> {
        &self.states.last().expect("trajectory never empty").1
    }
}

/// One deterministic DDIM update from noise level abar_t to abar_prev.
///
/// Reconstructs x0_hat = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t),
/// then re-noises to the previous level. abar_prev = abar_t is a no-op and
/// returns x_t unchanged.
pub fn ddim_step(
    x_t: &DVector<f64>,
    eps_hat: &DVector<f64>,
    abar_t: f64,
    abar_prev: f64,
) -> Result<DVector<f64>> {
    if !(abar_t > 0.0 && abar_t <= 1.0) || !(abar_prev > 0.0 && abar_prev <= 1.0) {
        return Err(CoreError::invalid("abar", format!("abar_t={abar_t}, abar_prev={abar_prev} outside (0, 1]")));
    }
    if abar_prev < abar_t {
        return Err(CoreError::invalid(
            "abar",
            format!("reverse step needs abar_prev >= abar_t, got {abar_prev} < {abar_t}"),
        ));
    }
    if abar_prev == abar_t {
        return Ok(x_t.clone());
    }
    let x0_hat = (x_t - eps_hat * (1.0 - abar_t).sqrt()) / abar_t.sqrt();
    Ok(x0_hat * abar_prev.sqrt() + eps_hat * (1.0 - abar_prev).sqrt())
}

#[derive(Debug, Clone)]
pub struct SampleOptions {
    pub steps: usize,
    pub chains: usize,
    pub class: Option<usize>,
    pub seed: u64,
    pub record: bool,
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub samples: Vec<DVector<f64>>,
    pub trajectories: Option<Vec<Trajectory>>,
}

/// Run `chains` independent DDIM chains under the guidance spec.
///
/// Each chain derives its own stream from (seed, chain index), so outputs
/// are independent of evaluation order. Each step makes one guided_eps
/// call (two denoiser evaluations for CFG/DoG).
pub fn sample(
    spec: &GuidanceSpec,
    schedule: &NoiseSchedule,
    opts: &SampleOptions,
) -> Result<SampleOutput> {
    if opts.chains == 0 {
        return Err(CoreError::invalid("chains", "need at least one chain"));
    }
    let ts = timestep_subsequence(schedule.timesteps(), opts.steps)?;
    let dim = spec.conditional.dim();
    let root = SplitRng::new(opts.seed);

    let mut samples = Vec::with_capacity(opts.chains);
    let mut trajectories = opts.record.then(|| Vec::with_capacity(opts.chains));

    for chain in 0..opts.chains {
        let mut rng = root.derive(chain as u64);
        let mut x = rng.normal_vector(dim);
        let mut states = opts
            .record
            .then(|| vec![(ts[0], x.clone())])
            .unwrap_or_default();

        for (k, &t) in ts.iter().enumerate() {
            let eps_hat = spec.guided_eps(&x, t, opts.class)?;
            let abar_t = schedule.abar(t)?;
            let abar_prev = if k + 1 < ts.len() {
                schedule.abar(ts[k + 1])?
            } else {
                1.0
            };
            x = ddim_step(&x, &eps_hat, abar_t, abar_prev)?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::NonFiniteState { chain, step: k });
            }
            if opts.record {
                let t_next = if k + 1 < ts.len() { ts[k + 1] } else { 0 };
                states.push((t_next, x.clone()));
            }
        }

        if let Some(trajs) = trajectories.as_mut() {
            trajs.push(Trajectory {
                chain,
                states,
                seed: opts.seed,
                guidance: spec.descriptor(),
            });
        }
        samples.push(x);
    }

    Ok(SampleOutput {
        samples,
        trajectories,
    })
}
