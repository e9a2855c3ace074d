//! Denoising diffusion: schedule, forward marginal, noise-prediction
//! training, and the deterministic reconstruction score.

mod model;
mod schedule;
mod score;

pub use model::{q_sample, train, Checkpoint, DiffusionConfig, DiffusionModel, LossCurve, LossPoint, TimeEmbedding};
pub use schedule::{NoiseSchedule, ScheduleSpec};
pub use score::{big_phi, f_est, phi, psi, score_dataset, t_error, t_error_batch, Denoiser};
