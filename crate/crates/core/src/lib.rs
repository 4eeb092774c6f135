//! Exact Gaussian-mixture machinery, a small trainable denoiser, guidance
//! combinators, deterministic DDIM sampling, and sample-set metrics for
//! studying domain-guided transfer of diffusion models on 2-D toy data.
//!
//! Everything is f64, single-threaded by default, and deterministic given
//! explicit seeds. Mixtures double as data distributions and as closed-form
//! oracles: the noised marginal of a Gaussian mixture is again a Gaussian
//! mixture, so scores, posteriors, and guided fields can all be checked
//! against exact values.

pub mod denoiser;
pub mod error;
pub mod gmm;
pub mod guidance;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod verify;

pub use error::{CoreError, Result};
pub use gmm::{DomainWorld, GaussianComponent, GaussianMixture, WorldLayout};
pub use rng::SplitRng;
pub use schedule::NoiseSchedule;
