//! Command-line front end for the domain-guidance laboratory.
//!
//! Exit codes: 0 success, 1 stage failure, 2 config error, 3 inconclusive
//! verification.

use clap::{Parser, Subcommand, ValueEnum};
use dog_core::gmm::build_world;
use dog_core::schedule::NoiseSchedule;
use dog_core::verify::{
    verify_degeneracies, verify_proposition1, verify_theorem1, CheckStatus, DegeneracyConfig,
    Prop1Config, Theorem1Config, VerificationResult,
};
use dog_lab::aggregate::{aggregate_reports, load_reports, write_summary};
use dog_lab::figure2::emit_figure2_data;
use dog_lab::pipeline::{run_pipeline_until, summarize_outcome, PipelineStage};
use dog_lab::{ExperimentConfig, LabError};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "dog-lab",
    about = "2-D laboratory for domain-guided diffusion transfer: train, sample, evaluate, verify"
)]
struct Cli {
    /// Path to a TOML experiment config; defaults are built in.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run only this seed instead of the config's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the world(s) and write world.json.
    World,
    /// Train the pre-trained, conditional, and guide models.
    Train,
    /// Sample every configured guidance variant.
    Sample,
    /// Compute metrics for every variant (runs prior stages as needed).
    Eval,
    /// Aggregate metrics across all seeds into summary files.
    Report,
    /// Export the four plot-data files for the world/samples/field figure.
    Figure2,
    /// Print the default config as TOML.
    DefaultConfig,
    /// Run an analytic verification check.
    Verify {
        #[command(subcommand)]
        check: VerifyCheck,
    },
}

#[derive(Subcommand)]
enum VerifyCheck {
    /// Classifier-guidance decomposition residual sweep.
    Prop1 {
        #[arg(long, default_value_t = 1e-9)]
        threshold: f64,
    },
    /// Finite-sample marginal-error bound 1/sqrt(N).
    Thm1 {
        #[arg(long, value_delimiter = ',', default_values_t = vec![4usize, 16, 64, 256])]
        n_ladder: Vec<usize>,
        #[arg(long, default_value_t = 2000)]
        m: usize,
    },
    /// Degenerate-weight sampler reductions (bitwise).
    Degeneracies {
        #[arg(long, default_value_t = 20)]
        steps: usize,
        #[arg(long, default_value_t = 32)]
        chains: usize,
    },
    /// All three checks in sequence.
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    World,
    Train,
    Sample,
    Eval,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, LabError> {
    let config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    Ok(config.with_seed_override(cli.seed))
}

fn run_stage(config: &ExperimentConfig, until: PipelineStage) -> Result<(), LabError> {
    for &seed in &config.run.seeds {
        let outcome = run_pipeline_until(config, seed, until)?;
        summarize_outcome(&outcome, std::io::stdout().lock())?;
    }
    Ok(())
}

fn emit_result(result: &VerificationResult) -> i32 {
    println!("{}", serde_json::to_string(result).expect("result serializes"));
    match result.status {
        CheckStatus::Pass => {
            println!("{}: PASS (worst {:.3e})", result.check, result.worst);
            0
        }
        CheckStatus::Fail => {
            println!("{}: FAIL (worst {:.3e})", result.check, result.worst);
            1
        }
        CheckStatus::Inconclusive => {
            println!("{}: INCONCLUSIVE", result.check);
            3
        }
    }
}

fn run_verify(config: &ExperimentConfig, check: &VerifyCheck) -> Result<i32, LabError> {
    let schedule = NoiseSchedule::linear(
        config.schedule.timesteps,
        config.schedule.beta_start,
        config.schedule.beta_end,
    )?;
    let seed = config.run.seeds[0];
    let world = build_world(
        config.world.seed.wrapping_add(seed),
        config.world.n_source,
        config.world.n_target,
        config.world.dim,
        &config.world.layout(),
    )?;

    let code = match check {
        VerifyCheck::Prop1 { threshold } => {
            let cfg = Prop1Config {
                grid_lo: config.world.box_min,
                grid_hi: config.world.box_max,
                threshold: *threshold,
                ..Default::default()
            };
            emit_result(&verify_proposition1(&world, &schedule, &cfg)?)
        }
        VerifyCheck::Thm1 { n_ladder, m } => {
            let cfg = Theorem1Config {
                n_ladder: n_ladder.clone(),
                m: *m,
                ..Default::default()
            };
            emit_result(&verify_theorem1(&cfg)?)
        }
        VerifyCheck::Degeneracies { steps, chains } => {
            let cfg = DegeneracyConfig {
                steps: *steps,
                chains: *chains,
                seed,
            };
            emit_result(&verify_degeneracies(&world, &schedule, &cfg)?)
        }
        VerifyCheck::All => {
            let mut worst = 0;
            let p1 = verify_proposition1(
                &world,
                &schedule,
                &Prop1Config {
                    grid_lo: config.world.box_min,
                    grid_hi: config.world.box_max,
                    ..Default::default()
                },
            )?;
            worst = worst.max(emit_result(&p1));
            let t1 = verify_theorem1(&Theorem1Config::default())?;
            worst = worst.max(emit_result(&t1));
            let dg = verify_degeneracies(&world, &schedule, &DegeneracyConfig::default())?;
            worst = worst.max(emit_result(&dg));
            worst
        }
    };
    Ok(code)
}

fn real_main() -> Result<i32, LabError> {
    let cli = Cli::parse();
    let config = load_config(&cli)?;

    match &cli.command {
        Command::World => run_stage(&config, PipelineStage::World)?,
        Command::Train => run_stage(&config, PipelineStage::Train)?,
        Command::Sample => run_stage(&config, PipelineStage::Sample)?,
        Command::Eval => run_stage(&config, PipelineStage::Eval)?,
        Command::Report => {
            run_stage(&config, PipelineStage::Eval)?;
            let reports = load_reports(&config)?;
            let summary = aggregate_reports(&reports)?;
            let files = write_summary(&config, &summary)?;
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Figure2 => {
            run_stage(&config, PipelineStage::Eval)?;
            for &seed in &config.run.seeds {
                for f in emit_figure2_data(&config, seed)? {
                    println!("wrote {}", f.display());
                }
            }
        }
        Command::DefaultConfig => {
            print!("{}", ExperimentConfig::default().to_toml());
        }
        Command::Verify { check } => {
            return run_verify(&config, check);
        }
    }
    Ok(0)
}

fn main() {
    match real_main() {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(err.exit_code());
        }
    }
}
