//! The experiment config file: one TOML document describing the world,
//! schedule, training budgets, sampling, guidance variants, metrics, and
//! the seed list. Every run embeds its resolved config in the manifest.

use crate::error::{LabError, Result};
use dog_core::denoiser::Parameterization;
use dog_core::gmm::WorldLayout;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    /// Base world seed; each run builds its world from `seed + run_seed`.
    pub seed: u64,
    pub n_source: usize,
    pub n_target: usize,
    pub dim: usize,
    pub box_min: f64,
    pub box_max: f64,
    pub target_region: Vec<(f64, f64)>,
    pub margin: f64,
    pub sigma_range: (f64, f64),
    pub target_sigma_range: Option<(f64, f64)>,
    pub class_split_axis: usize,
    pub target_prior: f64,
}

impl WorldConfig {
    pub fn layout(&self) -> WorldLayout {
        WorldLayout {
            box_min: self.box_min,
            box_max: self.box_max,
            target_region: self.target_region.clone(),
            margin: self.margin,
            sigma_range: self.sigma_range,
            target_sigma_range: self.target_sigma_range,
            class_split_axis: self.class_split_axis,
            target_prior: self.target_prior,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_width: usize,
    pub time_embed_dim: usize,
    pub parameterization: Parameterization,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainStageConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Label dropout for the joint CFG fine-tune; the dedicated
    /// conditional fine-tune always runs at 0 and unconditional stages at 1.
    #[serde(default = "default_dropout")]
    pub label_dropout: f64,
}

fn default_dropout() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    pub samples_per_variant: usize,
    pub record_trajectories: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CfgGuideStyle {
    /// A separate unconditional model trained from scratch on the target.
    Separate,
    /// The conditional model's own null-class path from joint
    /// label-dropout training.
    Joint,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GuidanceConfig {
    /// Which pipelines to run: subset of {"none", "cfg", "dog"}.
    pub variants: Vec<String>,
    pub w: f64,
    pub cfg_guide_style: CfgGuideStyle,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    pub radius_sigmas: f64,
    pub knn_k: usize,
    pub reference_samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub output_dir: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub schedule: ScheduleConfig,
    pub model: ModelConfig,
    pub pretrain: TrainStageConfig,
    pub finetune: TrainStageConfig,
    pub sampler: SamplerConfig,
    pub guidance: GuidanceConfig,
    pub metrics: MetricsConfig,
    pub run: RunConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig {
                seed: 424_242,
                n_source: 100,
                n_target: 5,
                dim: 2,
                box_min: -1.0,
                box_max: 1.0,
                target_region: vec![(0.1, 0.7), (0.1, 0.7)],
                margin: 0.05,
                sigma_range: (0.10, 0.20),
                target_sigma_range: Some((0.04, 0.06)),
                class_split_axis: 0,
                target_prior: 0.05,
            },
            schedule: ScheduleConfig {
                timesteps: 1000,
                beta_start: 1e-4,
                beta_end: 0.02,
            },
            model: ModelConfig {
                hidden_width: 64,
                time_embed_dim: 64,
                parameterization: Parameterization::Score,
            },
            pretrain: TrainStageConfig {
                steps: 10_000,
                batch_size: 128,
                learning_rate: 1e-3,
                label_dropout: 1.0,
            },
            finetune: TrainStageConfig {
                steps: 1000,
                batch_size: 128,
                learning_rate: 1e-3,
                label_dropout: 0.1,
            },
            sampler: SamplerConfig {
                steps: 20,
                samples_per_variant: 2000,
                record_trajectories: true,
            },
            guidance: GuidanceConfig {
                variants: vec!["none".into(), "cfg".into(), "dog".into()],
                w: 2.0,
                cfg_guide_style: CfgGuideStyle::Joint,
            },
            metrics: MetricsConfig {
                radius_sigmas: 3.0,
                knn_k: 3,
                reference_samples: 10_000,
            },
            run: RunConfig {
                seeds: vec![0, 1, 2, 3, 4],
                output_dir: "runs/toy".into(),
            },
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: ExperimentConfig = toml::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.seeds.is_empty() {
            return Err(LabError::Config("run.seeds must not be empty".into()));
        }
        if self.world.n_target == 0 || self.world.n_target >= self.world.n_source {
            return Err(LabError::Config(
                "world.n_target must satisfy 0 < n_target < n_source".into(),
            ));
        }
        if self.world.target_region.len() != self.world.dim {
            return Err(LabError::Config(
                "world.target_region needs one interval per dimension".into(),
            ));
        }
        if self.sampler.samples_per_variant == 0 || self.sampler.steps == 0 {
            return Err(LabError::Config("sampler needs positive steps and samples".into()));
        }
        if self.sampler.steps > self.schedule.timesteps {
            return Err(LabError::Config(
                "sampler.steps cannot exceed schedule.timesteps".into(),
            ));
        }
        for v in &self.guidance.variants {
            if !matches!(v.as_str(), "none" | "cfg" | "dog") {
                return Err(LabError::Config(format!("unknown guidance variant {v:?}")));
            }
        }
        if self.guidance.variants.is_empty() {
            return Err(LabError::Config("guidance.variants must not be empty".into()));
        }
        if self.metrics.knn_k == 0 {
            return Err(LabError::Config("metrics.knn_k must be positive".into()));
        }
        Ok(())
    }

    /// Content hash of the resolved config (canonical JSON bytes).
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&json);
        hex::encode(hasher.finalize())
    }

    /// Replace the seed list (CLI --seed override).
    pub fn with_seed_override(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.run.seeds = vec![s];
        }
        self
    }
}
