//! CSV writers and readers for samples, trajectories, and plot data.
//! Floats are written with Rust's shortest round-trip formatting, so
//! files parse back to the exact same values.

use crate::error::{LabError, Result};
use dog_core::sampler::Trajectory;
use nalgebra::DVector;
use std::io::Write;
use std::path::Path;

/// samples.csv: one row per sample with its chain index and class.
pub fn write_samples(
    path: &Path,
    rows: &[(usize, Option<usize>, DVector<f64>)],
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "chain,class,x0,x1")?;
    for (chain, class, point) in rows {
        let class_str = class.map_or("-".to_string(), |c| c.to_string());
        writeln!(out, "{},{},{},{}", chain, class_str, point[0], point[1])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_samples(path: &Path) -> Result<Vec<(usize, Option<usize>, DVector<f64>)>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(LabError::Config(format!("bad samples row {i}: {line:?}")));
        }
        let chain = fields[0]
            .parse::<usize>()
            .map_err(|e| LabError::Config(format!("row {i}: {e}")))?;
        let class = if fields[1] == "-" {
            None
        } else {
            Some(
                fields[1]
                    .parse::<usize>()
                    .map_err(|e| LabError::Config(format!("row {i}: {e}")))?,
            )
        };
        let x0 = fields[2]
            .parse::<f64>()
            .map_err(|e| LabError::Config(format!("row {i}: {e}")))?;
        let x1 = fields[3]
            .parse::<f64>()
            .map_err(|e| LabError::Config(format!("row {i}: {e}")))?;
        rows.push((chain, class, DVector::from_column_slice(&[x0, x1])));
    }
    Ok(rows)
}

/// trajectories.csv: one row per recorded state.
pub fn write_trajectories(path: &Path, class_runs: &[(Option<usize>, &[Trajectory])]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "chain,class,step,timestep,x0,x1")?;
    for (class, trajectories) in class_runs {
        let class_str = class.map_or("-".to_string(), |c| c.to_string());
        for traj in *trajectories {
            for (step, (t, state)) in traj.states.iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    traj.chain, class_str, step, t, state[0], state[1]
                )?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Generic table writer: header plus rows of already formatted cells.
pub fn write_table(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{header}")?;
    for row in rows {
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}
