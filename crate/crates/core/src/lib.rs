//! Membership inference against denoising diffusion models via per-example
//! quantile regression on the deterministic reconstruction error.
//!
//! * [`ndcore`]: tensors, reverse-mode autodiff, MLPs, SGD.
//! * [`datagen`]: procedural datasets, the member/public/holdout split, score caches.
//! * [`diffusion`]: noise schedules, training, and the t-error score.
//! * [`attack`]: pinball-loss quantile regressors, bags of weak attackers, the marginal baseline.
//! * [`eval`]: ROC and TPR@FPR, histograms, bagging and variance ablations.

pub mod attack;
pub mod datagen;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod ndcore;

pub use error::{Error, Result};
