//! Denoising loss, exact backprop, and the Adam training loop.
//!
//! A training item fixes everything random about one example: the clean
//! point, the (possibly dropped-out) class, the timestep, and the noise
//! draw. Losses and gradients over fixed items are pure functions, which
//! is what the finite-difference checks lean on; `draw_batch` owns all
//! randomness.

use super::mlp::{MlpParams, Parameterization, Workspace};
use super::{time_embedding, Denoiser};
use crate::error::{CoreError, Result};
use crate::gmm::GaussianMixture;
use crate::rng::SplitRng;
use crate::schedule::{forward_noise, NoiseSchedule};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Data source: a mixture, optionally with a class label per component.
#[derive(Debug, Clone)]
pub struct MixtureData {
    mixture: GaussianMixture,
    labels: Option<Vec<usize>>,
}

impl MixtureData {
    pub fn unconditional(mixture: GaussianMixture) -> Self {
        Self {
            mixture,
            labels: None,
        }
    }

    pub fn labeled(mixture: GaussianMixture, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != mixture.components().len() {
            return Err(CoreError::invalid(
                "labels",
                "need exactly one class label per mixture component",
            ));
        }
        Ok(Self {
            mixture,
            labels: Some(labels),
        })
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.mixture
    }

    fn draw(&self, rng: &mut SplitRng) -> (DVector<f64>, Option<usize>) {
        let (mut pts, idx) = self.mixture.sample_indexed(1, rng);
        let x0 = pts.pop().expect("one sample requested");
        let class = self.labels.as_ref().map(|l| l[idx[0]]);
        (x0, class)
    }
}

/// One fully determined training example.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub x0: DVector<f64>,
    pub class: Option<usize>,
    pub t: usize,
    pub eps: DVector<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: usize,
    /// Probability of replacing the class with the null token.
    pub label_dropout: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(steps: usize, label_dropout: f64, seed: u64) -> Self {
        Self {
            batch_size: 128,
            learning_rate: 1e-3,
            steps,
            label_dropout,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CoreError::invalid("batch_size", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.label_dropout) {
            return Err(CoreError::invalid("label_dropout", format!("{} outside [0, 1]", self.label_dropout)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(CoreError::invalid("learning_rate", "must be positive"));
        }
        Ok(())
    }
}

/// Draw a batch: per example, sample (x0, class) from the data source, a
/// uniform timestep, a standard-normal noise vector, then apply label
/// dropout. The draw order per example is fixed by this implementation.
pub fn draw_batch(
    data: &MixtureData,
    schedule: &NoiseSchedule,
    rng: &mut SplitRng,
    label_dropout: f64,
    batch_size: usize,
) -> Vec<TrainItem> {
    let t_count = schedule.timesteps();
    let dim = data.mixture.dim();
    (0..batch_size)
        .map(|_| {
            let (x0, mut class) = data.draw(rng);
            let t = 1 + rng.below(t_count);
            let eps = rng.normal_vector(dim);
            if class.is_some() && label_dropout > 0.0 && rng.next_f64() < label_dropout {
                class = None;
            }
            TrainItem { x0, class, t, eps }
        })
        .collect()
}

/// Mean squared eps-prediction error over fixed items, for any denoiser.
pub fn loss_on_items<D: Denoiser + ?Sized>(
    model: &D,
    items: &[TrainItem],
    schedule: &NoiseSchedule,
) -> Result<f64> {
    if items.is_empty() {
        return Err(CoreError::EmptyBatch);
    }
    let mut total = 0.0;
    for item in items {
        let abar = schedule.abar(item.t)?;
        let xt = forward_noise(&item.x0, abar, &item.eps);
        let pred = model.eps(&xt, item.t, item.class)?;
        total += (pred - &item.eps).norm_squared();
    }
    Ok(total / items.len() as f64)
}

/// Loss and exact reverse-mode gradients of the MLP over fixed items.
pub fn grad_on_items(
    params: &MlpParams,
    items: &[TrainItem],
    schedule: &NoiseSchedule,
) -> Result<(f64, MlpParams)> {
    if items.is_empty() {
        return Err(CoreError::EmptyBatch);
    }
    let cfg = params.config;
    let mut grads = MlpParams::zeros_like(cfg);
    let mut ws = Workspace::new(cfg.hidden_width);
    let inv_b = 1.0 / items.len() as f64;
    let mut total = 0.0;

    let mut d3 = DVector::zeros(cfg.hidden_width);
    let mut d2 = DVector::zeros(cfg.hidden_width);
    let mut d1 = DVector::zeros(cfg.hidden_width);

    for item in items {
        let abar = schedule.abar(item.t)?;
        let xt = forward_noise(&item.x0, abar, &item.eps);
        let emb = time_embedding(item.t, cfg.time_embed_dim)?;
        let row = match item.class {
            None => cfg.null_class_row(),
            Some(c) if c < cfg.class_count => c,
            Some(c) => {
                return Err(CoreError::UnknownClass {
                    class: c,
                    count: cfg.class_count,
                })
            }
        };

        let y = params.forward_raw(&xt, &emb, row, &mut ws);
        let scale = match cfg.parameterization {
            Parameterization::Epsilon => 1.0,
            Parameterization::Score => -(1.0 - abar).sqrt(),
        };
        let resid = y * scale - &item.eps;
        total += resid.norm_squared();

        // d loss / d y, folding in the batch mean and the output scale.
        let gy = resid * (2.0 * scale * inv_b);

        grads.w4.ger(1.0, &gy, &ws.h3, 1.0);
        grads.b4 += &gy;

        d3.gemv_tr(1.0, &params.w4, &gy, 0.0);
        for k in 0..cfg.hidden_width {
            if ws.z3[k] <= 0.0 {
                d3[k] = 0.0;
            }
        }
        grads.w3.ger(1.0, &d3, &ws.h2, 1.0);
        grads.b3 += &d3;
        grads.p3.ger(1.0, &d3, &emb, 1.0);

        d2.gemv_tr(1.0, &params.w3, &d3, 0.0);
        for k in 0..cfg.hidden_width {
            if ws.z2[k] <= 0.0 {
                d2[k] = 0.0;
            }
        }
        grads.w2.ger(1.0, &d2, &ws.h1, 1.0);
        grads.b2 += &d2;
        grads.p2.ger(1.0, &d2, &emb, 1.0);

        d1.gemv_tr(1.0, &params.w2, &d2, 0.0);
        for k in 0..cfg.hidden_width {
            if ws.z1[k] <= 0.0 {
                d1[k] = 0.0;
            }
        }
        grads.w1.ger(1.0, &d1, &xt, 1.0);
        grads.b1 += &d1;
        grads.p1.ger(1.0, &d1, &emb, 1.0);

        for k in 0..cfg.hidden_width {
            let g = d1[k] + d2[k] + d3[k];
            grads.class_embed[(row, k)] += g;
        }
    }

    Ok((total * inv_b, grads))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MlpParams,
    /// Loss value at every step.
    pub losses: Vec<f64>,
    /// How many training examples used the null class path.
    pub null_examples: u64,
}

/// Adam training loop. Each step draws its batch from a per-step
/// substream of the config seed, so the whole run is reproducible and
/// the loss at step k does not depend on how earlier draws were consumed.
pub fn train(
    init: MlpParams,
    data: &MixtureData,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut params = init;
    let mut m = MlpParams::zeros_like(params.config);
    let mut v = MlpParams::zeros_like(params.config);
    let mut losses = Vec::with_capacity(config.steps);
    let mut null_examples = 0u64;
    let root = SplitRng::new(config.seed);
    let (b1, b2, eps) = (config.adam_beta1, config.adam_beta2, config.adam_eps);

    for step in 1..=config.steps {
        let mut rng = root.derive(step as u64);
        let items = draw_batch(data, schedule, &mut rng, config.label_dropout, config.batch_size);
        null_examples += items.iter().filter(|it| it.class.is_none()).count() as u64;
        let (loss, grads) = grad_on_items(&params, &items, schedule)?;
        if !loss.is_finite() {
            return Err(CoreError::NonFiniteLoss { step, loss });
        }
        losses.push(loss);

        let bc1 = 1.0 - b1.powi(step as i32);
        let bc2 = 1.0 - b2.powi(step as i32);
        let lr = config.learning_rate;
        for (((_, p), (_, g)), ((_, ms), (_, vs))) in params
            .blocks_mut()
            .into_iter()
            .zip(grads.blocks())
            .zip(m.blocks_mut().into_iter().zip(v.blocks_mut()))
        {
            for i in 0..p.len() {
                ms[i] = b1 * ms[i] + (1.0 - b1) * g[i];
                vs[i] = b2 * vs[i] + (1.0 - b2) * g[i] * g[i];
                let mh = ms[i] / bc1;
                let vh = vs[i] / bc2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }

    Ok(TrainOutcome {
        params,
        losses,
        null_examples,
    })
}
