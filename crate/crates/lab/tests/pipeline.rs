//! Pipeline behaviour: stage skipping, determinism, instrumentation,
//! locking, aggregation, and the figure-data exporter.

use dog_lab::aggregate::{aggregate_reports, load_reports, write_summary};
use dog_lab::config::{CfgGuideStyle, ExperimentConfig};
use dog_lab::figure2::emit_figure2_data;
use dog_lab::manifest::hash_file;
use dog_lab::pipeline::{run_all_seeds, run_pipeline};
use dog_lab::LabError;
use std::collections::BTreeMap;
use std::path::Path;

/// A config small enough for test budgets but structurally complete.
fn tiny_config(dir: &Path) -> ExperimentConfig {
    let mut config = ExperimentConfig::default();
    config.world.n_source = 20;
    config.world.n_target = 4;
    config.pretrain.steps = 150;
    config.finetune.steps = 40;
    config.sampler.steps = 8;
    config.sampler.samples_per_variant = 60;
    config.metrics.reference_samples = 300;
    config.run.seeds = vec![0];
    config.run.output_dir = dir.to_string_lossy().into_owned();
    config
}

#[test]
fn pipeline_runs_skips_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());

    let first = run_pipeline(&config, 0).unwrap();
    assert_eq!(first.training_steps_run, 150 + 40 + 40);
    assert_eq!(first.dog_conditional_null_evals, 0);
    assert_eq!(first.reports.len(), 3);

    // Rerun: manifest short-circuits every stage.
    let second = run_pipeline(&config, 0).unwrap();
    assert_eq!(second.training_steps_run, 0);
    for (variant, report) in &first.reports {
        assert_eq!(report.frechet2, second.reports[variant].frechet2);
    }

    // Capture artifact hashes, wipe the run directory, rerun from scratch:
    // every artifact must come back byte-identical.
    let run_dir = first.run_dir.clone();
    let mut hashes = BTreeMap::new();
    for rel in first.manifest.artifact_paths() {
        hashes.insert(rel.clone(), hash_file(&run_dir.join(&rel)).unwrap());
    }
    std::fs::remove_dir_all(&run_dir).unwrap();
    let third = run_pipeline(&config, 0).unwrap();
    assert_eq!(third.training_steps_run, 150 + 40 + 40);
    for (rel, expected) in &hashes {
        let actual = hash_file(&run_dir.join(rel)).unwrap();
        assert_eq!(&actual, expected, "artifact {rel} changed across reruns");
    }
}

#[test]
fn zero_step_smoke_path_completes() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny_config(dir.path());
    config.pretrain.steps = 0;
    config.finetune.steps = 0;
    let outcome = run_pipeline(&config, 1).unwrap();
    assert_eq!(outcome.training_steps_run, 0);
    // Untrained models still produce well-formed metrics.
    for report in outcome.reports.values() {
        assert!(report.frechet2.is_finite());
        assert!((0.0..=1.0).contains(&report.in_domain_rate));
    }
}

#[test]
fn config_change_invalidates_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    run_pipeline(&config, 0).unwrap();

    let mut changed = config.clone();
    changed.guidance.w = 3.0;
    let outcome = run_pipeline(&changed, 0).unwrap();
    // Different fingerprint: training reruns.
    assert!(outcome.training_steps_run > 0);
}

#[test]
fn lock_file_blocks_concurrent_runs() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let run_dir = dir.path().join("seed_0");
    std::fs::create_dir_all(&run_dir).unwrap();
    std::fs::write(run_dir.join(".lock"), b"1234").unwrap();
    match run_pipeline(&config, 0) {
        Err(LabError::Locked(path)) => assert!(path.ends_with(".lock")),
        other => panic!("expected lock error, got {other:?}", other = other.map(|_| ())),
    }
    // Removing the stale lock unblocks the run.
    std::fs::remove_file(run_dir.join(".lock")).unwrap();
    run_pipeline(&config, 0).unwrap();
}

#[test]
fn separate_guide_style_trains_its_own_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny_config(dir.path());
    config.guidance.cfg_guide_style = CfgGuideStyle::Separate;
    let outcome = run_pipeline(&config, 0).unwrap();
    assert!(outcome.reports.contains_key("cfg"));
    assert_eq!(outcome.dog_conditional_null_evals, 0);
    assert!(outcome.run_dir.join("theta_guide.ckpt").exists());
}

#[test]
fn aggregation_and_summary_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny_config(dir.path());
    config.run.seeds = vec![0, 1];
    let outcomes = run_all_seeds(&config).unwrap();
    assert_eq!(outcomes.len(), 2);

    let reports = load_reports(&config).unwrap();
    let summary = aggregate_reports(&reports).unwrap();
    assert_eq!(summary.seeds, vec![0, 1]);
    assert_eq!(summary.wins.len(), 2);
    for w in &summary.wins {
        assert_eq!(w.dog_beats_cfg.len(), 5);
    }
    assert!(summary.stats.contains_key("dog/frechet2"));
    assert!(summary.stats.contains_key("cfg/in_domain_rate"));

    let files = write_summary(&config, &summary).unwrap();
    for f in &files {
        assert!(f.exists());
    }
    let tsv = std::fs::read_to_string(&files[0]).unwrap();
    assert!(tsv.lines().any(|l| l.starts_with("win/seed_0/frechet2")));
}

#[test]
fn figure2_exports_expected_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    run_pipeline(&config, 0).unwrap();
    let files = emit_figure2_data(&config, 0).unwrap();
    assert_eq!(files.len(), 4);

    let world_csv = std::fs::read_to_string(&files[0]).unwrap();
    assert_eq!(world_csv.lines().count(), 1 + config.world.n_source);

    let cfg_csv = std::fs::read_to_string(&files[1]).unwrap();
    assert_eq!(cfg_csv.lines().count(), 1 + config.sampler.samples_per_variant);
    let dog_csv = std::fs::read_to_string(&files[2]).unwrap();
    assert_eq!(dog_csv.lines().count(), 1 + config.sampler.samples_per_variant);

    // Field: header + classes x 20 x 20 rows, two vectors per row.
    let field_csv = std::fs::read_to_string(&files[3]).unwrap();
    assert_eq!(field_csv.lines().count(), 1 + 2 * 20 * 20);
    let header = field_csv.lines().next().unwrap();
    assert_eq!(header, "class,timestep,x0,x1,cfg_dx,cfg_dy,dog_dx,dog_dy");
}

#[test]
fn figure2_without_samples_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    // Only run through training; sampling artifacts are missing.
    dog_lab::pipeline::run_pipeline_until(&config, 0, dog_lab::pipeline::PipelineStage::Train)
        .unwrap();
    assert!(emit_figure2_data(&config, 0).is_err());
}
