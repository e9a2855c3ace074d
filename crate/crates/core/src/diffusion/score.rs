//! Deterministic one-step diffusion (φ) and denoising (ψ) maps, their
//! composition from a clean example, and the resulting t-error score.
//!
//! All maps act on a `(batch, dim)` matrix of flattened states. Every row is
//! processed independently, so a score does not depend on what else shares
//! its batch.

use rayon::prelude::*;

use crate::datagen::{flatten_batch, Example, ScoreCache, ScoreRecord};
use crate::diffusion::NoiseSchedule;
use crate::error::Result;
use crate::ndcore::Tensor;

/// Anything that predicts the noise component of a diffused state.
pub trait Denoiser: Sync {
    fn schedule(&self) -> &NoiseSchedule;

    /// ε_θ(z, t) for a `(batch, dim)` state.
    fn predict_noise(&self, z: &Tensor, t: usize) -> Result<Tensor>;
}

fn clean_estimate(sched: &NoiseSchedule, z: &Tensor, eps: &Tensor, t: usize) -> Result<Tensor> {
    let ab = sched.alphabar(t)?;
    z.axpby(1.0 / ab.sqrt(), eps, -(1.0 - ab).sqrt() / ab.sqrt())
}

/// Estimate of z₀ from `z` at step `t`: `(z − √(1−ᾱ_t)·ε_θ(z,t)) / √ᾱ_t`.
/// Accepts `0 ≤ t ≤ T` with ᾱ₀ = 1.
pub fn f_est<D: Denoiser + ?Sized>(model: &D, z: &Tensor, t: usize) -> Result<Tensor> {
    let sched = model.schedule();
    sched.check_step(t, 0, sched.steps())?;
    let eps = model.predict_noise(z, t)?;
    clean_estimate(sched, z, &eps, t)
}

/// Re-noises the clean estimate at step `t` to step `target`, reusing the
/// predicted noise.
fn jump<D: Denoiser + ?Sized>(model: &D, z: &Tensor, t: usize, target: usize) -> Result<Tensor> {
    let sched = model.schedule();
    let eps = model.predict_noise(z, t)?;
    let f = clean_estimate(sched, z, &eps, t)?;
    let ab = sched.alphabar(target)?;
    f.axpby(ab.sqrt(), &eps, (1.0 - ab).sqrt())
}

/// One deterministic diffusion step, `t → t+1`, for `0 ≤ t ≤ T−1`.
pub fn phi<D: Denoiser + ?Sized>(model: &D, z: &Tensor, t: usize) -> Result<Tensor> {
    let sched = model.schedule();
    sched.check_step(t, 0, sched.steps() - 1)?;
    jump(model, z, t, t + 1)
}

/// One deterministic denoising step, `t → t−1`, for `1 ≤ t ≤ T`.
pub fn psi<D: Denoiser + ?Sized>(model: &D, z: &Tensor, t: usize) -> Result<Tensor> {
    let sched = model.schedule();
    sched.check_step(t, 1, sched.steps())?;
    jump(model, z, t, t - 1)
}

/// `φ(…φ(φ(z0, 0), 1)…, t−1)`, the deterministic state at step `t`.
pub fn big_phi<D: Denoiser + ?Sized>(model: &D, z0: &Tensor, t: usize) -> Result<Tensor> {
    let sched = model.schedule();
    sched.check_step(t, 1, sched.steps())?;
    let mut z = z0.clone();
    for s in 0..t {
        z = phi(model, &z, s)?;
    }
    Ok(z)
}

/// Row-wise t-error `‖ψ(φ(z̃_t, t), t+1) − z̃_t‖²` with `z̃_t = Φ(z0, t)`,
/// for `1 ≤ t ≤ T−1`.
pub fn t_error_batch<D: Denoiser + ?Sized>(model: &D, z0: &Tensor, t: usize) -> Result<Vec<f64>> {
    let sched = model.schedule();
    sched.check_step(t, 1, sched.steps() - 1)?;
    let zt = big_phi(model, z0, t)?;
    let forward = phi(model, &zt, t)?;
    let back = psi(model, &forward, t + 1)?;
    let diff = back.sub(&zt)?;
    Ok((0..diff.rows())
        .map(|i| diff.row(i).iter().map(|v| v * v).sum())
        .collect())
}

/// t-error of a single flattened example.
pub fn t_error<D: Denoiser + ?Sized>(model: &D, z0: &[f64], t: usize) -> Result<f64> {
    let z = Tensor::new(vec![1, z0.len()], z0.to_vec())?;
    Ok(t_error_batch(model, &z, t)?[0])
}

/// Scores every example at step `t`, `batch_size` rows per forward pass.
/// Records come back sorted by id regardless of input order.
pub fn score_dataset<D: Denoiser + ?Sized>(
    model: &D,
    examples: &[Example],
    t: usize,
    batch_size: usize,
    label: Option<bool>,
) -> Result<ScoreCache> {
    let sched = model.schedule();
    sched.check_step(t, 1, sched.steps() - 1)?;
    let mut order: Vec<&Example> = examples.iter().collect();
    order.sort_by_key(|e| e.id);
    let chunks: Vec<Vec<ScoreRecord>> = order
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let z0 = flatten_batch(chunk)?;
            let scores = t_error_batch(model, &z0, t)?;
            Ok(chunk
                .iter()
                .zip(scores)
                .map(|(e, score)| ScoreRecord {
                    id: e.id,
                    t,
                    score,
                    label,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    ScoreCache::new(chunks.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, DatasetKind, Dims};
    use crate::diffusion::{DiffusionConfig, DiffusionModel};

    struct Constant {
        sched: NoiseSchedule,
        value: f64,
    }

    impl Denoiser for Constant {
        fn schedule(&self) -> &NoiseSchedule {
            &self.sched
        }
        fn predict_noise(&self, z: &Tensor, _t: usize) -> Result<Tensor> {
            Ok(Tensor::full(z.shape(), self.value))
        }
    }

    fn constant(value: f64) -> Constant {
        Constant {
            sched: NoiseSchedule::linear(10, 0.01, 0.3).unwrap(),
            value,
        }
    }

    fn row(v: &[f64]) -> Tensor {
        Tensor::new(vec![1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn f_est_with_zero_predictor() {
        let s = NoiseSchedule::linear(2, 0.5, 0.5).unwrap();
        let m = Constant { sched: s, value: 0.0 };
        // alphabar_2 = 0.25
        assert_eq!(f_est(&m, &row(&[1.0]), 2).unwrap().data(), &[2.0]);
    }

    #[test]
    fn f_est_inverts_q_sample_with_oracle_noise() {
        let m = constant(0.3);
        let z0 = row(&[0.5, -0.25]);
        let noise = Tensor::full(&[1, 2], 0.3);
        let zt = crate::diffusion::q_sample(&z0, 4, &noise, &m.sched).unwrap();
        let back = f_est(&m, &zt, 4).unwrap();
        for (a, b) in back.data().iter().zip(z0.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn phi_with_zero_predictor_rescales() {
        let m = constant(0.0);
        let z = row(&[1.5, -2.0]);
        let out = phi(&m, &z, 3).unwrap();
        let k = (m.sched.alphabar(4).unwrap() / m.sched.alphabar(3).unwrap()).sqrt();
        for (o, x) in out.data().iter().zip(z.data()) {
            assert!((o - k * x).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_predictor_round_trip() {
        let m = constant(-0.7);
        let z = row(&[0.2, 0.9, -1.0]);
        for t in 0..9 {
            let back = psi(&m, &phi(&m, &z, t).unwrap(), t + 1).unwrap();
            for (a, b) in back.data().iter().zip(z.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        for t in 1..9 {
            assert!(t_error(&m, &[0.2, 0.9, -1.0], t).unwrap() < 1e-20);
        }
    }

    #[test]
    fn big_phi_cases() {
        let m = constant(0.0);
        let z0 = row(&[0.8, -0.3]);
        for t in 1..=10 {
            let zt = big_phi(&m, &z0, t).unwrap();
            let s = m.sched.alphabar(t).unwrap().sqrt();
            for (a, b) in zt.data().iter().zip(z0.data()) {
                assert!((a - s * b).abs() < 1e-12);
            }
        }
        let c = constant(0.4);
        assert_eq!(big_phi(&c, &z0, 1).unwrap(), phi(&c, &z0, 0).unwrap());
        for t in 1..10 {
            assert_eq!(
                big_phi(&c, &z0, t + 1).unwrap(),
                phi(&c, &big_phi(&c, &z0, t).unwrap(), t).unwrap()
            );
        }
    }

    #[test]
    fn index_bounds() {
        let m = constant(0.0);
        let z = row(&[1.0]);
        assert!(phi(&m, &z, 10).is_err());
        assert!(psi(&m, &z, 0).is_err());
        assert!(big_phi(&m, &z, 0).is_err());
        assert!(big_phi(&m, &z, 11).is_err());
        assert!(t_error(&m, &[1.0], 0).is_err());
        assert!(t_error(&m, &[1.0], 10).is_err());
        assert!(f_est(&m, &z, 11).is_err());
    }

    #[test]
    fn random_model_outputs_are_finite() {
        let cfg = DiffusionConfig {
            steps: 10,
            width: 8,
            depth: 1,
            embed_width: 4,
            ..DiffusionConfig::default()
        };
        let m = DiffusionModel::new(&cfg, 3, 1).unwrap();
        let z = row(&[0.3, -0.2, 0.9]);
        assert_eq!(f_est(&m, &z, 5).unwrap().shape(), &[1, 3]);
        assert!(phi(&m, &z, 5).unwrap().is_finite());
        assert!(psi(&m, &z, 5).unwrap().is_finite());
        let e = t_error(&m, &[0.3, -0.2, 0.9], 5).unwrap();
        assert!(e.is_finite() && e >= 0.0);
    }

    #[test]
    fn scoring_is_order_and_batch_insensitive() {
        let cfg = DiffusionConfig {
            steps: 10,
            width: 8,
            depth: 1,
            embed_width: 4,
            ..DiffusionConfig::default()
        };
        let m = DiffusionModel::new(&cfg, 16, 2).unwrap();
        let data = generate(DatasetKind::Mix, 20, Dims::new(1, 4, 4), 0).unwrap();
        let a = score_dataset(&m, &data, 5, 64, None).unwrap();
        let mut rev = data.clone();
        rev.reverse();
        let b = score_dataset(&m, &rev, 5, 1, None).unwrap();
        assert_eq!(a, b);
        assert!(score_dataset(&m, &[], 5, 8, None).unwrap().is_empty());
    }
}
