//! The trainable eps-predictor: a 4-layer ReLU MLP with projected
//! sinusoidal time embeddings and an additive class-embedding table.
//!
//! Layer stack for input x in R^d and width h:
//!   z1 = W1 x  + b1 + P1 e(t) + E[c]
//!   z2 = W2 r1 + b2 + P2 e(t) + E[c]
//!   z3 = W3 r2 + b3 + P3 e(t) + E[c]
//!   y  = W4 r3 + b4                      (r = relu(z))
//! The class table has one row per class plus a trailing null row used for
//! unconditional evaluation. Score-parameterized models convert their
//! output to eps via eps = -sqrt(1 - abar_t) * y.

use super::{time_embedding, Denoiser};
use crate::error::{CoreError, Result};
use crate::rng::SplitRng;
use crate::schedule::NoiseSchedule;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameterization {
    /// Network output is the predicted noise directly.
    Epsilon,
    /// Network output is the score; converted to eps at evaluation.
    Score,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub dim: usize,
    pub hidden_width: usize,
    pub time_embed_dim: usize,
    pub class_count: usize,
    pub parameterization: Parameterization,
}

impl MlpConfig {
    pub fn new(dim: usize, class_count: usize, parameterization: Parameterization) -> Self {
        Self {
            dim,
            hidden_width: 64,
            time_embed_dim: 64,
            class_count,
            parameterization,
        }
    }

    /// Row index of the null (unconditional) class embedding.
    pub fn null_class_row(&self) -> usize {
        self.class_count
    }
}

/// All trainable tensors. Also reused as the gradient container: gradients
/// of a parameter live at the same position in an identically shaped value.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub config: MlpConfig,
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub w3: DMatrix<f64>,
    pub b3: DVector<f64>,
    pub w4: DMatrix<f64>,
    pub b4: DVector<f64>,
    pub p1: DMatrix<f64>,
    pub p2: DMatrix<f64>,
    pub p3: DMatrix<f64>,
    /// (class_count + 1) x hidden_width; last row is the null class.
    pub class_embed: DMatrix<f64>,
}

fn he_uniform(rng: &mut SplitRng, rows: usize, cols: usize, fan_in: usize) -> DMatrix<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.uniform(-bound, bound))
}

impl MlpParams {
    /// He-uniform hidden layers, zero-initialized output head and
    /// embedding table. Draw order is fixed: w1, w2, w3, p1, p2, p3.
    pub fn init(config: MlpConfig, rng: &mut SplitRng) -> Self {
        let (d, h, e) = (config.dim, config.hidden_width, config.time_embed_dim);
        let w1 = he_uniform(rng, h, d, d);
        let w2 = he_uniform(rng, h, h, h);
        let w3 = he_uniform(rng, h, h, h);
        let p1 = he_uniform(rng, h, e, e);
        let p2 = he_uniform(rng, h, e, e);
        let p3 = he_uniform(rng, h, e, e);
        Self {
            config,
            w1,
            b1: DVector::zeros(h),
            w2,
            b2: DVector::zeros(h),
            w3,
            b3: DVector::zeros(h),
            w4: DMatrix::zeros(d, h),
            b4: DVector::zeros(d),
            p1,
            p2,
            p3,
            class_embed: DMatrix::zeros(config.class_count + 1, h),
        }
    }

    pub fn zeros_like(config: MlpConfig) -> Self {
        let (d, h, e) = (config.dim, config.hidden_width, config.time_embed_dim);
        Self {
            config,
            w1: DMatrix::zeros(h, d),
            b1: DVector::zeros(h),
            w2: DMatrix::zeros(h, h),
            b2: DVector::zeros(h),
            w3: DMatrix::zeros(h, h),
            b3: DVector::zeros(h),
            w4: DMatrix::zeros(d, h),
            b4: DVector::zeros(d),
            p1: DMatrix::zeros(h, e),
            p2: DMatrix::zeros(h, e),
            p3: DMatrix::zeros(h, e),
            class_embed: DMatrix::zeros(config.class_count + 1, h),
        }
    }

    /// Re-target a checkpoint to `class_count` classes: layer weights are
    /// kept, and every class row starts as a copy of the old null row so a
    /// conditional fine-tune begins exactly at the unconditional output.
    pub fn adapt_class_count(&self, class_count: usize) -> Self {
        let mut config = self.config;
        config.class_count = class_count;
        let h = config.hidden_width;
        let old_null = self.class_embed.row(self.config.null_class_row()).clone_owned();
        let mut table = DMatrix::zeros(class_count + 1, h);
        for r in 0..=class_count {
            table.set_row(r, &old_null);
        }
        let mut out = self.clone();
        out.config = config;
        out.class_embed = table;
        out
    }

    /// Named parameter blocks in declared order (the checkpoint layout).
    pub fn block_names() -> &'static [&'static str] {
        &[
            "w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4", "p1", "p2", "p3", "class_embed",
        ]
    }

    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("w1", self.w1.as_slice()),
            ("b1", self.b1.as_slice()),
            ("w2", self.w2.as_slice()),
            ("b2", self.b2.as_slice()),
            ("w3", self.w3.as_slice()),
            ("b3", self.b3.as_slice()),
            ("w4", self.w4.as_slice()),
            ("b4", self.b4.as_slice()),
            ("p1", self.p1.as_slice()),
            ("p2", self.p2.as_slice()),
            ("p3", self.p3.as_slice()),
            ("class_embed", self.class_embed.as_slice()),
        ]
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("w1", self.w1.as_mut_slice()),
            ("b1", self.b1.as_mut_slice()),
            ("w2", self.w2.as_mut_slice()),
            ("b2", self.b2.as_mut_slice()),
            ("w3", self.w3.as_mut_slice()),
            ("b3", self.b3.as_mut_slice()),
            ("w4", self.w4.as_mut_slice()),
            ("b4", self.b4.as_mut_slice()),
            ("p1", self.p1.as_mut_slice()),
            ("p2", self.p2.as_mut_slice()),
            ("p3", self.p3.as_mut_slice()),
            ("class_embed", self.class_embed.as_mut_slice()),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|(_, s)| s.len()).sum()
    }

    fn class_row(&self, class: Option<usize>) -> Result<usize> {
        match class {
            None => Ok(self.config.null_class_row()),
            Some(c) if c < self.config.class_count => Ok(c),
            Some(c) => Err(CoreError::UnknownClass {
                class: c,
                count: self.config.class_count,
            }),
        }
    }

    /// Raw network output for one point, writing intermediate activations
    /// into `ws` for a later backward pass.
    pub(crate) fn forward_raw(
        &self,
        x: &DVector<f64>,
        t_emb: &DVector<f64>,
        class_row: usize,
        ws: &mut Workspace,
    ) -> DVector<f64> {
        let ce = self.class_embed.row(class_row).transpose();

        ws.z1.gemv(1.0, &self.w1, x, 0.0);
        ws.z1.gemv(1.0, &self.p1, t_emb, 1.0);
        ws.z1 += &self.b1;
        ws.z1 += &ce;
        ws.h1.zip_apply(&ws.z1, |h, z| *h = z.max(0.0));

        ws.z2.gemv(1.0, &self.w2, &ws.h1, 0.0);
        ws.z2.gemv(1.0, &self.p2, t_emb, 1.0);
        ws.z2 += &self.b2;
        ws.z2 += &ce;
        ws.h2.zip_apply(&ws.z2, |h, z| *h = z.max(0.0));

        ws.z3.gemv(1.0, &self.w3, &ws.h2, 0.0);
        ws.z3.gemv(1.0, &self.p3, t_emb, 1.0);
        ws.z3 += &self.b3;
        ws.z3 += &ce;
        ws.h3.zip_apply(&ws.z3, |h, z| *h = z.max(0.0));

        let mut y = self.b4.clone();
        y.gemv(1.0, &self.w4, &ws.h3, 1.0);
        y
    }

    /// Eps-prediction for one point: runs the network on (x, t, class) and
    /// applies the parameterization conversion.
    pub fn eps_point(
        &self,
        x: &DVector<f64>,
        t: usize,
        class: Option<usize>,
        schedule: &NoiseSchedule,
    ) -> Result<DVector<f64>> {
        if x.len() != self.config.dim {
            return Err(CoreError::DimensionMismatch {
                expected: self.config.dim,
                actual: x.len(),
            });
        }
        let abar = schedule.abar(t)?;
        let row = self.class_row(class)?;
        let t_emb = time_embedding(t, self.config.time_embed_dim)?;
        let mut ws = Workspace::new(self.config.hidden_width);
        let y = self.forward_raw(x, &t_emb, row, &mut ws);
        Ok(match self.config.parameterization {
            Parameterization::Epsilon => y,
            Parameterization::Score => y * (-(1.0 - abar).sqrt()),
        })
    }
}

/// Scratch activations reused across points.
pub(crate) struct Workspace {
    pub z1: DVector<f64>,
    pub h1: DVector<f64>,
    pub z2: DVector<f64>,
    pub h2: DVector<f64>,
    pub z3: DVector<f64>,
    pub h3: DVector<f64>,
}

impl Workspace {
    pub fn new(width: usize) -> Self {
        Self {
            z1: DVector::zeros(width),
            h1: DVector::zeros(width),
            z2: DVector::zeros(width),
            h2: DVector::zeros(width),
            z3: DVector::zeros(width),
            h3: DVector::zeros(width),
        }
    }
}

/// Frozen MLP bound to a schedule, usable wherever a denoiser is expected.
/// Projected time embeddings are cached per timestep; unconditional
/// evaluations are counted for the dropout/no-null-eval checks.
pub struct MlpDenoiser {
    params: MlpParams,
    schedule: NoiseSchedule,
    temb: Vec<OnceLock<DVector<f64>>>,
    null_evals: AtomicU64,
}

impl MlpDenoiser {
    pub fn new(params: MlpParams, schedule: NoiseSchedule) -> Self {
        let t_count = schedule.timesteps();
        Self {
            params,
            schedule,
            temb: (0..t_count).map(|_| OnceLock::new()).collect(),
            null_evals: AtomicU64::new(0),
        }
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// Number of unconditional (null-class) evaluations so far.
    pub fn null_eval_count(&self) -> u64 {
        self.null_evals.load(Ordering::Relaxed)
    }

    pub fn reset_null_eval_count(&self) {
        self.null_evals.store(0, Ordering::Relaxed);
    }
}

impl Denoiser for MlpDenoiser {
    fn dim(&self) -> usize {
        self.params.config.dim
    }

    fn timesteps(&self) -> usize {
        self.schedule.timesteps()
    }

    fn eps(&self, x: &DVector<f64>, t: usize, class: Option<usize>) -> Result<DVector<f64>> {
        if x.len() != self.params.config.dim {
            return Err(CoreError::DimensionMismatch {
                expected: self.params.config.dim,
                actual: x.len(),
            });
        }
        let abar = self.schedule.abar(t)?;
        let row = self.params.class_row(class)?;
        if class.is_none() {
            self.null_evals.fetch_add(1, Ordering::Relaxed);
        }
        let emb = self.temb[t - 1].get_or_init(|| {
            time_embedding(t, self.params.config.time_embed_dim).expect("config dim is even")
        });
        let mut ws = Workspace::new(self.params.config.hidden_width);
        let y = self.params.forward_raw(x, emb, row, &mut ws);
        Ok(match self.params.config.parameterization {
            Parameterization::Epsilon => y,
            Parameterization::Score => y * (-(1.0 - abar).sqrt()),
        })
    }
}
