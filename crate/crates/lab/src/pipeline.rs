//! The per-seed experiment pipeline: build world, pre-train on the source,
//! fine-tune on the target, sample each guidance variant, evaluate.
//!
//! Stages write their artifacts under `<output_dir>/seed_<s>/` and record
//! content hashes in the manifest; rerunning with the same config skips
//! every stage whose artifacts still verify. All randomness derives from
//! the run seed, so a clean rerun reproduces every artifact byte for byte.

use crate::config::{CfgGuideStyle, ExperimentConfig};
use crate::csvio;
use crate::error::{LabError, Result};
use crate::manifest::RunManifest;
use dog_core::denoiser::{
    load_checkpoint, require_architecture, save_checkpoint, train, MixtureData, MlpConfig,
    MlpDenoiser, MlpParams, TrainConfig,
};
use dog_core::gmm::{build_world, DomainWorld};
use dog_core::guidance::GuidanceSpec;
use dog_core::metrics::{
    frechet_gaussian, in_domain_rate, knn_precision_recall, mean_target_loglik, MetricsReport,
};
use dog_core::sampler::{sample, SampleOptions};
use dog_core::schedule::NoiseSchedule;
use dog_core::rng::SplitRng;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

const VARIANTS: &[&str] = &["none", "cfg", "dog"];

/// How many chains per class get their full trajectory recorded.
const TRAJECTORY_CHAINS: usize = 50;

pub struct PipelineOutcome {
    pub manifest: RunManifest,
    pub run_dir: PathBuf,
    /// Training steps actually executed (0 when every stage was skipped).
    pub training_steps_run: usize,
    /// Null-class evaluations of the fine-tuned conditional model during
    /// DoG sampling; the transfer contract keeps this at zero.
    pub dog_conditional_null_evals: u64,
    pub reports: BTreeMap<String, MetricsReport>,
}

/// Advisory lock: created on entry, removed on drop.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(".lock");
        if path.exists() {
            return Err(LabError::Locked(path));
        }
        std::fs::write(&path, std::process::id().to_string())?;
        Ok(Self { path })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        std::fs::remove_file(&self.path).ok();
    }
}

fn schedule_of(config: &ExperimentConfig) -> Result<NoiseSchedule> {
    Ok(NoiseSchedule::linear(
        config.schedule.timesteps,
        config.schedule.beta_start,
        config.schedule.beta_end,
    )?)
}

fn mlp_config(config: &ExperimentConfig, class_count: usize) -> MlpConfig {
    MlpConfig {
        dim: config.world.dim,
        hidden_width: config.model.hidden_width,
        time_embed_dim: config.model.time_embed_dim,
        class_count,
        parameterization: config.model.parameterization,
    }
}

fn train_stage_config(
    stage: &crate::config::TrainStageConfig,
    label_dropout: f64,
    seed: u64,
) -> TrainConfig {
    TrainConfig {
        batch_size: stage.batch_size,
        learning_rate: stage.learning_rate,
        steps: stage.steps,
        label_dropout,
        adam_beta1: 0.9,
        adam_beta2: 0.999,
        adam_eps: 1e-8,
        seed,
    }
}

fn write_losses(path: &Path, losses: &[f64]) -> Result<()> {
    let rows: Vec<Vec<String>> = losses
        .iter()
        .enumerate()
        .map(|(i, l)| vec![(i + 1).to_string(), l.to_string()])
        .collect();
    csvio::write_table(path, "step,loss", &rows)?;
    Ok(())
}

fn run_dir(config: &ExperimentConfig, run_seed: u64) -> PathBuf {
    PathBuf::from(&config.run.output_dir).join(format!("seed_{run_seed}"))
}

/// Labels of the target mixture's components, in component order.
fn target_labels(world: &DomainWorld) -> Vec<usize> {
    world.class_partition().to_vec()
}

struct StageContext<'a> {
    config: &'a ExperimentConfig,
    dir: PathBuf,
    schedule: NoiseSchedule,
    manifest: RunManifest,
    run_seed: u64,
    steps_run: usize,
}

impl StageContext<'_> {
    fn stream(&self, slot: u64) -> SplitRng {
        SplitRng::new(self.run_seed).derive(slot)
    }

    fn seed_for(&self, slot: u64) -> u64 {
        self.stream(slot).next_u64()
    }

    fn world_path(&self) -> PathBuf {
        self.dir.join("world.json")
    }

    fn ckpt_path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.ckpt"))
    }

    fn load_params(&self, name: &str, class_count: usize) -> Result<MlpParams> {
        let (params, header) = load_checkpoint(&self.ckpt_path(name))?;
        require_architecture(&header, &mlp_config(self.config, class_count))?;
        if header.schedule_fingerprint != self.schedule.fingerprint() {
            return Err(LabError::stage(
                "load",
                format!(
                    "checkpoint {name} was trained against schedule {}, config wants {}",
                    header.schedule_fingerprint,
                    self.schedule.fingerprint()
                ),
            ));
        }
        Ok(params)
    }
}

/// Pipeline stages in execution order; commands run everything up to and
/// including their stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PipelineStage {
    World,
    Train,
    Sample,
    Eval,
}

pub fn run_pipeline(config: &ExperimentConfig, run_seed: u64) -> Result<PipelineOutcome> {
    run_pipeline_until(config, run_seed, PipelineStage::Eval)
}

pub fn run_pipeline_until(
    config: &ExperimentConfig,
    run_seed: u64,
    until: PipelineStage,
) -> Result<PipelineOutcome> {
    config.validate()?;
    let dir = run_dir(config, run_seed);
    std::fs::create_dir_all(&dir)?;
    let _lock = DirLock::acquire(&dir)?;

    let fingerprint = config.fingerprint();
    let manifest = match RunManifest::load(&dir)? {
        Some(m) if m.config_fingerprint == fingerprint => m,
        _ => RunManifest::new(fingerprint.clone(), config.to_toml(), run_seed),
    };

    let mut ctx = StageContext {
        config,
        dir: dir.clone(),
        schedule: schedule_of(config)?,
        manifest,
        run_seed,
        steps_run: 0,
    };

    let mut dog_null_evals = 0;
    let mut reports = BTreeMap::new();

    stage_world(&mut ctx)?;
    if until >= PipelineStage::Train {
        stage_pretrain(&mut ctx)?;
        stage_finetune_cond(&mut ctx)?;
        stage_finetune_guide(&mut ctx)?;
    }
    if until >= PipelineStage::Sample {
        dog_null_evals = stage_sample(&mut ctx)?;
    }
    if until >= PipelineStage::Eval {
        reports = stage_eval(&mut ctx)?;
    }

    ctx.manifest.save(&dir)?;
    Ok(PipelineOutcome {
        manifest: ctx.manifest,
        run_dir: dir,
        training_steps_run: ctx.steps_run,
        dog_conditional_null_evals: dog_null_evals,
        reports,
    })
}

/// Run every seed in the config, sequentially, returning outcomes in seed
/// order.
pub fn run_all_seeds(config: &ExperimentConfig) -> Result<Vec<PipelineOutcome>> {
    config
        .run
        .seeds
        .iter()
        .map(|&s| run_pipeline(config, s))
        .collect()
}

fn stage_world(ctx: &mut StageContext) -> Result<()> {
    if ctx.manifest.stage_is_valid("world", &ctx.dir) {
        return Ok(());
    }
    let wc = &ctx.config.world;
    let world = build_world(
        wc.seed.wrapping_add(ctx.run_seed),
        wc.n_source,
        wc.n_target,
        wc.dim,
        &wc.layout(),
    )?;
    world.save_json(&ctx.world_path())?;
    ctx.manifest.record_stage("world", &ctx.dir, &["world.json"])?;
    ctx.manifest.save(&ctx.dir)?;
    Ok(())
}

fn stage_pretrain(ctx: &mut StageContext) -> Result<()> {
    if ctx.manifest.stage_is_valid("pretrain", &ctx.dir) {
        return Ok(());
    }
    let world = DomainWorld::load_json(&ctx.world_path())?;
    let class_count = world.class_count();
    let data = MixtureData::unconditional(world.source().clone());
    let init = MlpParams::init(mlp_config(ctx.config, class_count), &mut ctx.stream(10));
    let tc = train_stage_config(&ctx.config.pretrain, 1.0, ctx.seed_for(11));
    let out = train(init, &data, &ctx.schedule, &tc)
        .map_err(|e| LabError::stage("pretrain", e.to_string()))?;
    ctx.steps_run += tc.steps;
    save_checkpoint(&out.params, &ctx.schedule.fingerprint(), tc.seed, &ctx.ckpt_path("theta0"))?;
    write_losses(&ctx.dir.join("losses_pretrain.csv"), &out.losses)?;
    ctx.manifest
        .record_stage("pretrain", &ctx.dir, &["theta0.ckpt", "losses_pretrain.csv"])?;
    ctx.manifest.save(&ctx.dir)?;
    Ok(())
}

fn stage_finetune_cond(ctx: &mut StageContext) -> Result<()> {
    if ctx.manifest.stage_is_valid("finetune_cond", &ctx.dir) {
        return Ok(());
    }
    let world = DomainWorld::load_json(&ctx.world_path())?;
    let class_count = world.class_count();
    let theta0 = ctx.load_params("theta0", class_count)?;
    // Class rows start at the pre-trained null row: the conditional model
    // begins exactly at the pre-trained unconditional output.
    let init = theta0.adapt_class_count(class_count);
    let data = MixtureData::labeled(world.target_mixture(), target_labels(&world))?;
    let tc = train_stage_config(&ctx.config.finetune, 0.0, ctx.seed_for(12));
    let out = train(init, &data, &ctx.schedule, &tc)
        .map_err(|e| LabError::stage("finetune_cond", e.to_string()))?;
    ctx.steps_run += tc.steps;
    save_checkpoint(&out.params, &ctx.schedule.fingerprint(), tc.seed, &ctx.ckpt_path("theta_cond"))?;
    write_losses(&ctx.dir.join("losses_finetune_cond.csv"), &out.losses)?;
    ctx.manifest.record_stage(
        "finetune_cond",
        &ctx.dir,
        &["theta_cond.ckpt", "losses_finetune_cond.csv"],
    )?;
    ctx.manifest.save(&ctx.dir)?;
    Ok(())
}

fn stage_finetune_guide(ctx: &mut StageContext) -> Result<()> {
    let needs_guide = ctx.config.guidance.variants.iter().any(|v| v == "cfg");
    if !needs_guide || ctx.manifest.stage_is_valid("finetune_guide", &ctx.dir) {
        return Ok(());
    }
    let world = DomainWorld::load_json(&ctx.world_path())?;
    let class_count = world.class_count();
    let tc_seed = ctx.seed_for(14);
    let out = match ctx.config.guidance.cfg_guide_style {
        CfgGuideStyle::Separate => {
            // A separate unconditional model trained from scratch on the
            // target marginal: only target-domain training touches it.
            let init = MlpParams::init(mlp_config(ctx.config, class_count), &mut ctx.stream(13));
            let data = MixtureData::unconditional(world.target_mixture());
            let tc = train_stage_config(&ctx.config.finetune, 1.0, tc_seed);
            ctx.steps_run += tc.steps;
            train(init, &data, &ctx.schedule, &tc)
                .map_err(|e| LabError::stage("finetune_guide", e.to_string()))?
        }
        CfgGuideStyle::Joint => {
            // Joint label-dropout fine-tune from the pre-trained weights;
            // its null path doubles as the CFG guide.
            let theta0 = ctx.load_params("theta0", class_count)?;
            let init = theta0.adapt_class_count(class_count);
            let data = MixtureData::labeled(world.target_mixture(), target_labels(&world))?;
            let tc = train_stage_config(
                &ctx.config.finetune,
                ctx.config.finetune.label_dropout,
                tc_seed,
            );
            ctx.steps_run += tc.steps;
            train(init, &data, &ctx.schedule, &tc)
                .map_err(|e| LabError::stage("finetune_guide", e.to_string()))?
        }
    };
    save_checkpoint(&out.params, &ctx.schedule.fingerprint(), tc_seed, &ctx.ckpt_path("theta_guide"))?;
    write_losses(&ctx.dir.join("losses_finetune_guide.csv"), &out.losses)?;
    ctx.manifest.record_stage(
        "finetune_guide",
        &ctx.dir,
        &["theta_guide.ckpt", "losses_finetune_guide.csv"],
    )?;
    ctx.manifest.save(&ctx.dir)?;
    Ok(())
}

/// Denoisers and guidance specs for the sampling and figure stages.
pub struct VariantModels {
    pub conditional: Arc<MlpDenoiser>,
    pub pretrained: Arc<MlpDenoiser>,
    pub guide: Option<Arc<MlpDenoiser>>,
    pub cfg_conditional: Arc<MlpDenoiser>,
}

impl VariantModels {
    pub fn spec(&self, variant: &str, w: f64) -> Result<GuidanceSpec> {
        match variant {
            "none" => Ok(GuidanceSpec::unguided(self.conditional.clone())),
            "dog" => Ok(GuidanceSpec::dog(
                self.conditional.clone(),
                self.pretrained.clone(),
                w,
            )),
            "cfg" => {
                let guide = self
                    .guide
                    .clone()
                    .ok_or_else(|| LabError::stage("sample", "cfg variant without a guide model"))?;
                Ok(GuidanceSpec::cfg(self.cfg_conditional.clone(), guide, w))
            }
            other => Err(LabError::Config(format!("unknown variant {other:?}"))),
        }
    }
}

fn load_variant_models(ctx: &StageContext, world: &DomainWorld) -> Result<VariantModels> {
    let class_count = world.class_count();
    let conditional = Arc::new(MlpDenoiser::new(
        ctx.load_params("theta_cond", class_count)?,
        ctx.schedule.clone(),
    ));
    let pretrained = Arc::new(MlpDenoiser::new(
        ctx.load_params("theta0", class_count)?,
        ctx.schedule.clone(),
    ));
    let needs_guide = ctx.config.guidance.variants.iter().any(|v| v == "cfg");
    let guide = if needs_guide {
        Some(Arc::new(MlpDenoiser::new(
            ctx.load_params("theta_guide", class_count)?,
            ctx.schedule.clone(),
        )))
    } else {
        None
    };
    // Joint style samples CFG from the jointly trained model on both
    // branches; separate style shares the dedicated conditional.
    let cfg_conditional = match ctx.config.guidance.cfg_guide_style {
        CfgGuideStyle::Joint => guide.clone().unwrap_or_else(|| conditional.clone()),
        CfgGuideStyle::Separate => conditional.clone(),
    };
    Ok(VariantModels {
        conditional,
        pretrained,
        guide,
        cfg_conditional,
    })
}

fn stage_sample(ctx: &mut StageContext) -> Result<u64> {
    if ctx.manifest.stage_is_valid("sample", &ctx.dir) {
        return Ok(0);
    }
    let world = DomainWorld::load_json(&ctx.world_path())?;
    let class_count = world.class_count();
    let models = load_variant_models(ctx, &world)?;
    let w = ctx.config.guidance.w;
    let per_class = ctx.config.sampler.samples_per_variant / class_count;
    let mut artifacts: Vec<String> = Vec::new();
    let mut dog_null_evals = 0;

    for (vi, variant) in VARIANTS.iter().enumerate() {
        if !ctx.config.guidance.variants.iter().any(|v| v == variant) {
            continue;
        }
        let spec = models.spec(variant, w)?;
        if *variant == "dog" {
            models.conditional.reset_null_eval_count();
        }

        let mut rows = Vec::with_capacity(per_class * class_count);
        let mut class_trajs = Vec::new();
        for class in 0..class_count {
            let seed = ctx.seed_for(100 + (vi as u64) * 10 + class as u64);
            let out = sample(
                &spec,
                &ctx.schedule,
                &SampleOptions {
                    steps: ctx.config.sampler.steps,
                    chains: per_class,
                    class: Some(class),
                    seed,
                    record: false,
                },
            )
            .map_err(|e| LabError::stage("sample", e.to_string()))?;
            for (chain, point) in out.samples.into_iter().enumerate() {
                rows.push((chain, Some(class), point));
            }
            if ctx.config.sampler.record_trajectories {
                // Chain k is a pure function of (seed, k), so re-running
                // the first few chains with recording reproduces the same
                // trajectories the unrecorded pass followed.
                let traj_out = sample(
                    &spec,
                    &ctx.schedule,
                    &SampleOptions {
                        steps: ctx.config.sampler.steps,
                        chains: per_class.min(TRAJECTORY_CHAINS),
                        class: Some(class),
                        seed,
                        record: true,
                    },
                )
                .map_err(|e| LabError::stage("sample", e.to_string()))?;
                class_trajs.push((Some(class), traj_out.trajectories.unwrap()));
            }
        }

        let samples_name = format!("samples_{variant}.csv");
        csvio::write_samples(&ctx.dir.join(&samples_name), &rows)?;
        artifacts.push(samples_name);
        if ctx.config.sampler.record_trajectories {
            let traj_name = format!("trajectories_{variant}.csv");
            let borrowed: Vec<(Option<usize>, &[dog_core::sampler::Trajectory])> = class_trajs
                .iter()
                .map(|(c, t)| (*c, t.as_slice()))
                .collect();
            csvio::write_trajectories(&ctx.dir.join(&traj_name), &borrowed)?;
            artifacts.push(traj_name);
        }

        if *variant == "dog" {
            dog_null_evals = models.conditional.null_eval_count();
        }
    }

    let refs: Vec<&str> = artifacts.iter().map(|s| s.as_str()).collect();
    ctx.manifest.record_stage("sample", &ctx.dir, &refs)?;
    ctx.manifest.save(&ctx.dir)?;
    Ok(dog_null_evals)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub run_seed: u64,
    pub config_fingerprint: String,
    pub variants: BTreeMap<String, MetricsReport>,
}

fn stage_eval(ctx: &mut StageContext) -> Result<BTreeMap<String, MetricsReport>> {
    if ctx.manifest.stage_is_valid("eval", &ctx.dir) {
        let report: EvalReport =
            serde_json::from_str(&std::fs::read_to_string(ctx.dir.join("report.json"))?)?;
        return Ok(report.variants);
    }
    let world = DomainWorld::load_json(&ctx.world_path())?;
    let mut ref_rng = ctx.stream(200);
    let reference = world
        .target_mixture()
        .sample(ctx.config.metrics.reference_samples, &mut ref_rng);

    let mut variants = BTreeMap::new();
    for variant in VARIANTS {
        if !ctx.config.guidance.variants.iter().any(|v| v == variant) {
            continue;
        }
        let rows = csvio::read_samples(&ctx.dir.join(format!("samples_{variant}.csv")))?;
        let samples: Vec<DVector<f64>> = rows.into_iter().map(|(_, _, p)| p).collect();
        let (precision, recall) =
            knn_precision_recall(&samples, &reference, ctx.config.metrics.knn_k)?;
        let report = MetricsReport {
            frechet2: frechet_gaussian(&samples, &reference)?,
            in_domain_rate: in_domain_rate(&samples, &world, ctx.config.metrics.radius_sigmas)?,
            precision,
            recall,
            mean_target_loglik: mean_target_loglik(&samples, &world)?,
            sample_count: samples.len(),
            config_fingerprint: ctx.manifest.config_fingerprint.clone(),
        };
        variants.insert(variant.to_string(), report);
    }

    let report = EvalReport {
        run_seed: ctx.run_seed,
        config_fingerprint: ctx.manifest.config_fingerprint.clone(),
        variants: variants.clone(),
    };
    std::fs::write(
        ctx.dir.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;

    let mut human = String::new();
    let mut machine = String::new();
    for (variant, m) in &report.variants {
        human.push_str(&format!("{variant}: {}\n", m.human_summary()));
        for line in m.machine_lines() {
            machine.push_str(&format!("{variant}\t{line}\n"));
        }
    }
    std::fs::write(ctx.dir.join("report.txt"), human)?;
    std::fs::write(ctx.dir.join("metrics.tsv"), machine)?;

    ctx.manifest.record_stage(
        "eval",
        &ctx.dir,
        &["report.json", "report.txt", "metrics.tsv"],
    )?;
    ctx.manifest.save(&ctx.dir)?;
    Ok(variants)
}

/// Convenience for tests and the figure stage: rebuild the world and the
/// denoisers of a completed run.
pub fn load_run_models(
    config: &ExperimentConfig,
    run_seed: u64,
) -> Result<(DomainWorld, VariantModels, NoiseSchedule, PathBuf)> {
    let dir = run_dir(config, run_seed);
    let schedule = schedule_of(config)?;
    let ctx = StageContext {
        config,
        dir: dir.clone(),
        schedule: schedule.clone(),
        manifest: RunManifest::load(&dir)?
            .ok_or_else(|| LabError::stage("load", "run has no manifest; run the pipeline first"))?,
        run_seed,
        steps_run: 0,
    };
    let world = DomainWorld::load_json(&ctx.world_path())?;
    let models = load_variant_models(&ctx, &world)?;
    Ok((world, models, schedule, dir))
}

/// Write a one-line human summary of an outcome to `out`.
pub fn summarize_outcome(outcome: &PipelineOutcome, mut out: impl Write) -> std::io::Result<()> {
    writeln!(
        out,
        "seed {} ({} training steps run):",
        outcome.manifest.run_seed, outcome.training_steps_run
    )?;
    for (variant, report) in &outcome.reports {
        writeln!(out, "  {variant}: {}", report.human_summary())?;
    }
    Ok(())
}
