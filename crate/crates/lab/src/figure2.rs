//! Plot-data export for the four-panel world/samples/field figure:
//! (a) the world's modes, (b) CFG samples, (c) DoG samples, (d) the
//! guidance direction fields on a grid at a mid-trajectory timestep.

use crate::config::ExperimentConfig;
use crate::csvio;
use crate::error::{LabError, Result};
use crate::pipeline::load_run_models;
use dog_core::guidance::guidance_field;
use dog_core::schedule::timestep_subsequence;
use nalgebra::DVector;
use std::path::PathBuf;

/// Grid resolution per axis for the direction field.
const FIELD_GRID: usize = 20;

pub fn emit_figure2_data(config: &ExperimentConfig, run_seed: u64) -> Result<Vec<PathBuf>> {
    let (world, models, schedule, dir) = load_run_models(config, run_seed)?;
    let mut written = Vec::new();

    // Panel (a): world scatter. sigma is the isotropic mode scale.
    let mut rows = Vec::new();
    for (i, comp) in world.source().components().iter().enumerate() {
        let tpos = world.target_mode_indices().iter().position(|&t| t == i);
        let is_target = tpos.is_some();
        let class = tpos.map_or("-".to_string(), |p| world.class_partition()[p].to_string());
        rows.push(vec![
            i.to_string(),
            comp.mean()[0].to_string(),
            comp.mean()[1].to_string(),
            comp.cov()[(0, 0)].sqrt().to_string(),
            comp.weight().to_string(),
            (is_target as u8).to_string(),
            class,
        ]);
    }
    let world_path = dir.join("figure2_world.csv");
    csvio::write_table(
        &world_path,
        "mode,x0,x1,sigma,weight,is_target,class",
        &rows,
    )?;
    written.push(world_path);

    // Panels (b) and (c): per-method sample scatters.
    for (variant, panel) in [("cfg", "figure2_cfg_samples.csv"), ("dog", "figure2_dog_samples.csv")] {
        let src = dir.join(format!("samples_{variant}.csv"));
        if !src.exists() {
            return Err(LabError::stage(
                "figure2",
                format!("missing {src:?}; run the sampling stage with the {variant} variant first"),
            ));
        }
        let samples = csvio::read_samples(&src)?;
        let rows: Vec<Vec<String>> = samples
            .iter()
            .map(|(_, class, p)| {
                vec![
                    class.map_or("-".to_string(), |c| c.to_string()),
                    p[0].to_string(),
                    p[1].to_string(),
                ]
            })
            .collect();
        let path = dir.join(panel);
        csvio::write_table(&path, "class,x0,x1", &rows)?;
        written.push(path);
    }

    // Panel (d): both guidance fields at the middle of the sampling
    // timestep subsequence, one row per (class, grid point).
    let ts = timestep_subsequence(schedule.timesteps(), config.sampler.steps)?;
    let t_mid = ts[ts.len() / 2];
    let w = config.guidance.w;
    let cfg_spec = models.spec("cfg", w)?;
    let dog_spec = models.spec("dog", w)?;
    let (lo, hi) = (config.world.box_min, config.world.box_max);
    let mut grid = Vec::with_capacity(FIELD_GRID * FIELD_GRID);
    for i in 0..FIELD_GRID {
        for j in 0..FIELD_GRID {
            let x = lo + (hi - lo) * i as f64 / (FIELD_GRID - 1) as f64;
            let y = lo + (hi - lo) * j as f64 / (FIELD_GRID - 1) as f64;
            grid.push(DVector::from_column_slice(&[x, y]));
        }
    }
    let mut rows = Vec::new();
    for class in 0..world.class_count() {
        let field = guidance_field(&cfg_spec, &dog_spec, &grid, t_mid, Some(class), &schedule)?;
        for (point, (cfg_dir, dog_dir)) in grid.iter().zip(field.iter()) {
            rows.push(vec![
                class.to_string(),
                t_mid.to_string(),
                point[0].to_string(),
                point[1].to_string(),
                cfg_dir[0].to_string(),
                cfg_dir[1].to_string(),
                dog_dir[0].to_string(),
                dog_dir[1].to_string(),
            ]);
        }
    }
    let field_path = dir.join("figure2_field.csv");
    csvio::write_table(
        &field_path,
        "class,timestep,x0,x1,cfg_dx,cfg_dy,dog_dx,dog_dy",
        &rows,
    )?;
    written.push(field_path);

    Ok(written)
}
