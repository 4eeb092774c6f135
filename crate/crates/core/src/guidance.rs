//! Guidance combinators over eps-space denoiser outputs.
//!
//! All three sampling modes share one shape: evaluate a conditional model,
//! optionally evaluate a guide unconditionally, and extrapolate
//! `w * eps_cond - (w - 1) * eps_guide`. Classifier-free guidance points
//! the guide at a target-domain unconditional model; domain guidance
//! points it at the frozen pre-trained model. The decomposition checks
//! reconstruct these fields from exact mixture oracles.

use crate::denoiser::{Denoiser, OracleDenoiser};
use crate::error::{CoreError, Result};
use crate::gmm::DomainWorld;
use crate::schedule::{eps_to_score, NoiseSchedule};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

pub type SharedDenoiser = Arc<dyn Denoiser>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceMode {
    None,
    Cfg,
    Dog,
}

impl GuidanceMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            GuidanceMode::None => "none",
            GuidanceMode::Cfg => "cfg",
            GuidanceMode::Dog => "dog",
        }
    }
}

/// A guidance configuration: mode, weight, the conditional model, and the
/// guide. NONE ignores the guide and the weight.
#[derive(Clone)]
pub struct GuidanceSpec {
    pub mode: GuidanceMode,
    pub w: f64,
    pub conditional: SharedDenoiser,
    pub guide: Option<SharedDenoiser>,
}

impl GuidanceSpec {
    pub fn unguided(conditional: SharedDenoiser) -> Self {
        Self {
            mode: GuidanceMode::None,
            w: 1.0,
            conditional,
            guide: None,
        }
    }

    /// CFG: the guide is a target-domain unconditional branch. Pass the
    /// conditional model itself for joint (label-dropout) training, or a
    /// separately trained unconditional model.
    pub fn cfg(conditional: SharedDenoiser, guide: SharedDenoiser, w: f64) -> Self {
        Self {
            mode: GuidanceMode::Cfg,
            w,
            conditional,
            guide: Some(guide),
        }
    }

    /// DoG: the guide is the frozen pre-trained model.
    pub fn dog(conditional: SharedDenoiser, pretrained: SharedDenoiser, w: f64) -> Self {
        Self {
            mode: GuidanceMode::Dog,
            w,
            conditional,
            guide: Some(guide_alias(pretrained)),
        }
    }

    pub fn descriptor(&self) -> String {
        format!("{}:w={}", self.mode.as_str(), self.w)
    }

    /// Guided eps-prediction. CFG and DoG evaluate exactly two denoisers:
    /// the conditional at (x, t, c) and the guide at (x, t, NULL).
    pub fn guided_eps(&self, x: &DVector<f64>, t: usize, class: Option<usize>) -> Result<DVector<f64>> {
        match self.mode {
            GuidanceMode::None => self.conditional.eps(x, t, class),
            GuidanceMode::Cfg | GuidanceMode::Dog => {
                let guide = self.guide.as_ref().ok_or(CoreError::MissingGuide {
                    mode: self.mode.as_str(),
                })?;
                let eps_cond = self.conditional.eps(x, t, class)?;
                let eps_guide = guide.eps(x, t, None)?;
                combine(&eps_cond, &eps_guide, self.w)
            }
        }
    }
}

fn guide_alias(d: SharedDenoiser) -> SharedDenoiser {
    d
}

/// w * eps_cond - (w - 1) * eps_guide.
///
/// The w = 1 and w = 0 reductions return the corresponding input
/// unchanged, bit for bit, so degenerate-weight runs are exactly the
/// unguided pipelines.
pub fn combine(eps_cond: &DVector<f64>, eps_guide: &DVector<f64>, w: f64) -> Result<DVector<f64>> {
    if eps_cond.len() != eps_guide.len() {
        return Err(CoreError::DimensionMismatch {
            expected: eps_cond.len(),
            actual: eps_guide.len(),
        });
    }
    if w == 1.0 {
        return Ok(eps_cond.clone());
    }
    if w == 0.0 {
        return Ok(eps_guide.clone());
    }
    Ok(eps_cond * w - eps_guide * (w - 1.0))
}

/// Exact oracle denoisers for one world: conditional target classes, the
/// target marginal, and the source marginal, all over one schedule.
pub struct WorldOracles {
    /// Conditional on class via `Some(c)`, target marginal via `None`.
    pub target: Arc<OracleDenoiser>,
    /// Source (pre-trained) marginal.
    pub source: Arc<OracleDenoiser>,
}

impl WorldOracles {
    pub fn build(world: &DomainWorld, schedule: &NoiseSchedule) -> Result<Self> {
        let classes = (0..world.class_count())
            .map(|c| world.class_mixture(c))
            .collect::<Result<Vec<_>>>()?;
        let target = Arc::new(OracleDenoiser::with_classes(
            world.target_mixture(),
            classes,
            schedule.clone(),
        ));
        let source = Arc::new(OracleDenoiser::unconditional(
            world.source().clone(),
            schedule.clone(),
        ));
        Ok(Self { target, source })
    }

    pub fn cfg_spec(&self, w: f64) -> GuidanceSpec {
        GuidanceSpec::cfg(self.target.clone(), self.target.clone(), w)
    }

    pub fn dog_spec(&self, w: f64) -> GuidanceSpec {
        GuidanceSpec::dog(self.target.clone(), self.source.clone(), w)
    }
}

/// Residual of the classifier-guidance decomposition,
/// score_DoG - [score_CFG + (w-1) grad log p(D_tgt | x_t)],
/// with every term built from exact oracles. The two guided scores travel
/// through the eps parameterization and the combinator; the posterior
/// gradient comes straight from the mixtures, so the routes are
/// independent up to float arithmetic.
pub fn prop1_residual(
    world: &DomainWorld,
    schedule: &NoiseSchedule,
    x: &DVector<f64>,
    t: usize,
    class: usize,
    w: f64,
) -> Result<DVector<f64>> {
    prop1_residual_with_fault(world, schedule, x, t, class, w, 0.0)
}

/// Same residual with an additive fault injected into the posterior
/// gradient, used to prove the check can fail.
pub fn prop1_residual_with_fault(
    world: &DomainWorld,
    schedule: &NoiseSchedule,
    x: &DVector<f64>,
    t: usize,
    class: usize,
    w: f64,
    posterior_fault: f64,
) -> Result<DVector<f64>> {
    let abar = schedule.abar(t)?;
    let oracles = WorldOracles::build(world, schedule)?;
    let eps_dog = oracles.dog_spec(w).guided_eps(x, t, Some(class))?;
    let eps_cfg = oracles.cfg_spec(w).guided_eps(x, t, Some(class))?;
    let score_dog = eps_to_score(&eps_dog, abar)?;
    let score_cfg = eps_to_score(&eps_cfg, abar)?;
    let mut posterior = world.domain_posterior_log_grad(x, abar)?;
    posterior.add_scalar_mut(posterior_fault);
    Ok(score_dog - score_cfg - posterior * (w - 1.0))
}

/// The DoG-vs-CFG log density ratio gap between two points:
/// (w-1) * [log p(D_tgt | x_out) - log p(D_tgt | x_in)], plus the raw
/// posterior log-ratio itself. Strongly negative gaps mean DoG suppresses
/// x_out relative to CFG.
pub fn density_ratio_check(
    world: &DomainWorld,
    schedule: &NoiseSchedule,
    x_out: &DVector<f64>,
    x_in: &DVector<f64>,
    t: usize,
    w: f64,
) -> Result<(f64, f64)> {
    let abar = schedule.abar(t)?;
    let lp_out = world.log_posterior_unnormalized(x_out, abar)?;
    let lp_in = world.log_posterior_unnormalized(x_in, abar)?;
    let ratio = lp_out - lp_in;
    Ok(((w - 1.0) * ratio, ratio))
}

/// Guidance correction directions for plotting: for each grid point, the
/// CFG and DoG correction terms (w-1)(eps_cond - eps_guide), converted to
/// score space.
pub fn guidance_field(
    cfg: &GuidanceSpec,
    dog: &GuidanceSpec,
    grid: &[DVector<f64>],
    t: usize,
    class: Option<usize>,
    schedule: &NoiseSchedule,
) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
    let abar = schedule.abar(t)?;
    let mut out = Vec::with_capacity(grid.len());
    for x in grid {
        let mut dirs = Vec::with_capacity(2);
        for spec in [cfg, dog] {
            let guide = spec.guide.as_ref().ok_or(CoreError::MissingGuide {
                mode: spec.mode.as_str(),
            })?;
            let eps_cond = spec.conditional.eps(x, t, class)?;
            let eps_guide = guide.eps(x, t, None)?;
            let correction = (eps_cond - eps_guide) * (spec.w - 1.0);
            dirs.push(eps_to_score(&correction, abar)?);
        }
        let dog_dir = dirs.pop().expect("two directions");
        let cfg_dir = dirs.pop().expect("two directions");
        out.push((cfg_dir, dog_dir));
    }
    Ok(out)
}
