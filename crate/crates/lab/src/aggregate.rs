//! Multi-seed aggregation: per-metric means and standard deviations per
//! variant, plus per-seed win/loss of DoG against CFG.

use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};
use crate::pipeline::EvalReport;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedWins {
    pub seed: u64,
    /// metric name -> true when DoG strictly beats CFG on that metric.
    pub dog_beats_cfg: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub seeds: Vec<u64>,
    /// "variant/metric" -> (mean, standard deviation over seeds).
    pub stats: BTreeMap<String, (f64, f64)>,
    pub wins: Vec<SeedWins>,
}

/// Higher-is-better flags for the DoG vs CFG comparison.
const METRIC_DIRECTIONS: &[(&str, bool)] = &[
    ("frechet2", false),
    ("in_domain_rate", true),
    ("precision", true),
    ("recall", true),
    ("mean_target_loglik", true),
];

fn metric_value(report: &dog_core::metrics::MetricsReport, name: &str) -> f64 {
    match name {
        "frechet2" => report.frechet2,
        "in_domain_rate" => report.in_domain_rate,
        "precision" => report.precision,
        "recall" => report.recall,
        "mean_target_loglik" => report.mean_target_loglik,
        _ => f64::NAN,
    }
}

/// Aggregate the eval reports of the given seed directories. All reports
/// must come from the same config fingerprint.
pub fn aggregate_reports(reports: &[EvalReport]) -> Result<AggregateSummary> {
    if reports.is_empty() {
        return Err(LabError::Config("no reports to aggregate".into()));
    }
    let fingerprint = &reports[0].config_fingerprint;
    for r in reports {
        if &r.config_fingerprint != fingerprint {
            return Err(LabError::Config(format!(
                "mismatched configs: seed {} has fingerprint {}, expected {}",
                r.run_seed, r.config_fingerprint, fingerprint
            )));
        }
    }

    let mut stats = BTreeMap::new();
    let variants: Vec<String> = reports[0].variants.keys().cloned().collect();
    for variant in &variants {
        for (metric, _) in METRIC_DIRECTIONS {
            let values: Vec<f64> = reports
                .iter()
                .filter_map(|r| r.variants.get(variant))
                .map(|m| metric_value(m, metric))
                .collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            stats.insert(format!("{variant}/{metric}"), (mean, var.sqrt()));
        }
    }

    let mut wins = Vec::new();
    for r in reports {
        if let (Some(dog), Some(cfg)) = (r.variants.get("dog"), r.variants.get("cfg")) {
            let mut beats = BTreeMap::new();
            for (metric, higher_better) in METRIC_DIRECTIONS {
                let d = metric_value(dog, metric);
                let c = metric_value(cfg, metric);
                let win = if *higher_better { d > c } else { d < c };
                beats.insert(metric.to_string(), win);
            }
            wins.push(SeedWins {
                seed: r.run_seed,
                dog_beats_cfg: beats,
            });
        }
    }

    Ok(AggregateSummary {
        seeds: reports.iter().map(|r| r.run_seed).collect(),
        stats,
        wins,
    })
}

pub fn load_reports(config: &ExperimentConfig) -> Result<Vec<EvalReport>> {
    config
        .run
        .seeds
        .iter()
        .map(|s| {
            let path = Path::new(&config.run.output_dir)
                .join(format!("seed_{s}"))
                .join("report.json");
            let text = std::fs::read_to_string(&path).map_err(|e| {
                LabError::Config(format!("cannot read {path:?} (run eval first): {e}"))
            })?;
            Ok(serde_json::from_str(&text)?)
        })
        .collect()
}

/// Write summary.tsv and summary.txt under the output directory.
pub fn write_summary(config: &ExperimentConfig, summary: &AggregateSummary) -> Result<Vec<PathBuf>> {
    let dir = Path::new(&config.run.output_dir);
    std::fs::create_dir_all(dir)?;

    let mut tsv = String::from("key\tmean\tstd\n");
    for (key, (mean, std)) in &summary.stats {
        tsv.push_str(&format!("{key}\t{mean}\t{std}\n"));
    }
    for w in &summary.wins {
        for (metric, win) in &w.dog_beats_cfg {
            tsv.push_str(&format!("win/seed_{}/{}\t{}\t0\n", w.seed, metric, u8::from(*win)));
        }
    }
    let tsv_path = dir.join("summary.tsv");
    std::fs::write(&tsv_path, &tsv)?;

    let mut txt = format!("seeds: {:?}\n\nper-variant metrics (mean +/- std):\n", summary.seeds);
    for (key, (mean, std)) in &summary.stats {
        txt.push_str(&format!("  {key:<28} {mean:>12.6} +/- {std:.6}\n"));
    }
    txt.push_str("\nDoG vs CFG per seed (1 = DoG wins):\n");
    for w in &summary.wins {
        let line: Vec<String> = w
            .dog_beats_cfg
            .iter()
            .map(|(m, v)| format!("{m}={}", u8::from(*v)))
            .collect();
        txt.push_str(&format!("  seed {}: {}\n", w.seed, line.join(" ")));
    }
    let txt_path = dir.join("summary.txt");
    std::fs::write(&txt_path, &txt)?;

    Ok(vec![tsv_path, txt_path])
}
