use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datagen::Example;
use crate::diffusion::schedule::{NoiseSchedule, ScheduleSpec};
use crate::diffusion::Denoiser;
use crate::error::{Error, Result};
use crate::ndcore::{clip_grad_norm, Activation, Architecture, Mlp, MlpRecord, Sgd, SgdConfig, Tape, Tensor};

/// Sinusoidal features of the step index: pairs `(sin tω_i, cos tω_i)` with
/// geometrically spaced frequencies starting at ω₀ = 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeEmbedding {
    pub width: usize,
}

impl TimeEmbedding {
    const MAX_PERIOD: f64 = 1000.0;

    pub fn new(width: usize) -> Result<Self> {
        if width < 2 || !width.is_multiple_of(2) {
            return Err(Error::Config(format!("time embedding width must be even and >= 2, got {width}")));
        }
        Ok(Self { width })
    }

    pub fn embed(&self, t: usize) -> Vec<f64> {
        let half = self.width / 2;
        let mut out = Vec::with_capacity(self.width);
        for i in 0..half {
            let freq = (-(Self::MAX_PERIOD.ln()) * i as f64 / half as f64).exp();
            let arg = t as f64 * freq;
            out.push(arg.sin());
            out.push(arg.cos());
        }
        out
    }
}

/// Diffusion-model hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Hidden width of the noise predictor.
    pub width: usize,
    /// Number of residual hidden layers.
    pub depth: usize,
    pub embed_width: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            beta_start: 0.002,
            beta_end: 0.4,
            width: 64,
            depth: 3,
            embed_width: 16,
        }
    }
}

/// A noise schedule with an MLP noise predictor ε_θ(z, t) that sees the
/// flattened state concatenated with the time embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionModel {
    schedule: NoiseSchedule,
    embedding: TimeEmbedding,
    eps_net: Mlp,
    data_dim: usize,
}

impl DiffusionModel {
    pub fn new(cfg: &DiffusionConfig, data_dim: usize, seed: u64) -> Result<Self> {
        let schedule = NoiseSchedule::linear(cfg.steps, cfg.beta_start, cfg.beta_end)?;
        let embedding = TimeEmbedding::new(cfg.embed_width)?;
        if cfg.width == 0 || data_dim == 0 {
            return Err(Error::Config("network and data widths must be positive".into()));
        }
        let mut widths = vec![data_dim + cfg.embed_width];
        widths.extend(std::iter::repeat_n(cfg.width, cfg.depth + 1));
        widths.push(data_dim);
        let arch = Architecture {
            widths,
            activation: Activation::Silu,
            residual: true,
        };
        Ok(Self {
            schedule,
            embedding,
            eps_net: Mlp::new(arch, seed)?,
            data_dim,
        })
    }

    pub fn from_parts(schedule: NoiseSchedule, embedding: TimeEmbedding, eps_net: Mlp) -> Result<Self> {
        let arch = eps_net.architecture();
        let data_dim = arch.output_width();
        if arch.input_width() != data_dim + embedding.width {
            return Err(Error::Dimension {
                op: "DiffusionModel::from_parts",
                expected: vec![data_dim + embedding.width],
                got: vec![arch.input_width()],
            });
        }
        Ok(Self {
            schedule,
            embedding,
            eps_net,
            data_dim,
        })
    }

    pub fn eps_net(&self) -> &Mlp {
        &self.eps_net
    }

    pub fn embedding(&self) -> TimeEmbedding {
        self.embedding
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    fn net_input(&self, z: &Tensor, steps: &[usize]) -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = steps.iter().map(|&t| self.embedding.embed(t)).collect();
        z.hcat(&Tensor::from_rows(&rows)?)
    }

    pub fn to_checkpoint(&self, seed: u64, steps: usize) -> Checkpoint {
        Checkpoint {
            schedule: self.schedule.spec(),
            embed_width: self.embedding.width,
            network: self.eps_net.to_record(seed, steps),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Self::from_parts(
            NoiseSchedule::from_spec(&ck.schedule)?,
            TimeEmbedding::new(ck.embed_width)?,
            Mlp::from_record(&ck.network)?,
        )
    }
}

/// On-disk diffusion model: schedule description plus network record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schedule: ScheduleSpec,
    pub embed_width: usize,
    pub network: MlpRecord,
}

impl Denoiser for DiffusionModel {
    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn predict_noise(&self, z: &Tensor, t: usize) -> Result<Tensor> {
        let input = self.net_input(z, &vec![t; z.rows()])?;
        self.eps_net.forward(&input)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
}

/// Training loss trace. The first point is the loss of the very first
/// minibatch; later points average the minibatch losses since the previous
/// point.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub every: usize,
    pub points: Vec<LossPoint>,
}

impl LossCurve {
    pub fn initial(&self) -> Option<f64> {
        self.points.first().map(|p| p.loss)
    }

    pub fn last(&self) -> Option<f64> {
        self.points.last().map(|p| p.loss)
    }
}

/// `√ᾱ_t·z0 + √(1−ᾱ_t)·noise`, for `1 ≤ t ≤ T`.
pub fn q_sample(z0: &Tensor, t: usize, noise: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_step(t, 1, sched.steps())?;
    let ab = sched.alphabar(t)?;
    z0.axpby(ab.sqrt(), noise, (1.0 - ab).sqrt())
}

/// Fits ε_θ by minibatch SGD on the noise-prediction objective
/// `E‖ε − ε_θ(√ᾱ_t z0 + √(1−ᾱ_t) ε, t)‖²` (mean over coordinates) with `t`
/// uniform on `1..=T`.
pub fn train(
    model: &mut DiffusionModel,
    members: &[Example],
    cfg: &SgdConfig,
    log_every: usize,
) -> Result<LossCurve> {
    if members.is_empty() {
        return Err(Error::Empty("diffusion training set"));
    }
    cfg.validate()?;
    let d = model.data_dim;
    if let Some(bad) = members.iter().find(|e| e.flat().len() != d) {
        return Err(Error::Dimension {
            op: "diffusion::train",
            expected: vec![d],
            got: bad.pixels.shape().to_vec(),
        });
    }
    let log_every = log_every.max(1);
    let mut curve = LossCurve {
        every: log_every,
        points: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::new(cfg);
    let big_t = model.schedule.steps();
    let (mut window, mut window_n) = (0.0, 0usize);

    for step in 0..cfg.steps {
        let b = cfg.batch_size;
        let mut zt = Vec::with_capacity(b * d);
        let mut noise = Vec::with_capacity(b * d);
        let mut ts = Vec::with_capacity(b);
        for _ in 0..b {
            let ex = &members[rng.random_range(0..members.len())];
            let t = rng.random_range(1..=big_t);
            let ab = model.schedule.alphabar(t)?;
            let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
            for &x in ex.flat() {
                let e: f64 = rng.sample(StandardNormal);
                noise.push(e);
                zt.push(sa * x + sn * e);
            }
            ts.push(t);
        }
        let zt = Tensor::new(vec![b, d], zt)?;
        let input = model.net_input(&zt, &ts)?;

        let mut tape = Tape::new();
        let params = model.eps_net.bind(&mut tape);
        let x = tape.leaf(input);
        let target = tape.leaf(Tensor::new(vec![b, d], noise)?);
        let pred = model.eps_net.forward_tape(&mut tape, &params, x)?;
        let loss = tape.mse(pred, target)?;
        let loss_value = tape.value(loss).item()?;
        if !loss_value.is_finite() {
            return Err(Error::Diverged {
                step,
                loss: loss_value,
            });
        }
        let grads = tape.backward(loss)?;
        let mut grads: Vec<Tensor> = params.iter().map(|&p| grads.wrt(&tape, p)).collect();
        if let Some(c) = cfg.clip_norm {
            clip_grad_norm(&mut grads, c);
        }
        opt.step(model.eps_net.params_mut(), &grads, cfg.lr_at(step))?;

        if step == 0 {
            curve.points.push(LossPoint { step: 0, loss: loss_value });
        }
        window += loss_value;
        window_n += 1;
        if (step + 1) % log_every == 0 || step + 1 == cfg.steps {
            curve.points.push(LossPoint {
                step: step + 1,
                loss: window / window_n as f64,
            });
            window = 0.0;
            window_n = 0;
        }
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, DatasetKind, Dims};

    fn tiny() -> (DiffusionConfig, Vec<Example>) {
        let cfg = DiffusionConfig {
            steps: 10,
            width: 16,
            depth: 1,
            embed_width: 4,
            ..DiffusionConfig::default()
        };
        (cfg, generate(DatasetKind::Blobs, 8, Dims::new(1, 4, 4), 1).unwrap())
    }

    #[test]
    fn embedding_is_injective() {
        let e = TimeEmbedding::new(16).unwrap();
        let all: Vec<Vec<f64>> = (0..=1000).map(|t| e.embed(t)).collect();
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                let d: f64 = all[i].iter().zip(&all[j]).map(|(a, b)| (a - b).abs()).sum();
                assert!(d > 1e-6, "t = {i} and t = {j} collide");
            }
        }
        assert!(TimeEmbedding::new(3).is_err());
    }

    #[test]
    fn q_sample_cases() {
        let s = NoiseSchedule::linear(2, 0.5, 0.5).unwrap();
        let z0 = Tensor::new(vec![1], vec![2.0]).unwrap();
        let y = q_sample(&z0, 2, &Tensor::new(vec![1], vec![1.0]).unwrap(), &s).unwrap();
        assert!((y.data()[0] - (0.5 * 2.0 + 0.75f64.sqrt())).abs() < 1e-15);
        let y0 = q_sample(&z0, 1, &Tensor::zeros(&[1]), &s).unwrap();
        assert_eq!(y0.data()[0], 0.5f64.sqrt() * 2.0);
        assert!(q_sample(&z0, 0, &Tensor::zeros(&[1]), &s).is_err());
        assert!(q_sample(&z0, 3, &Tensor::zeros(&[1]), &s).is_err());
    }

    #[test]
    fn zero_steps_leaves_parameters() {
        let (cfg, data) = tiny();
        let mut m = DiffusionModel::new(&cfg, 16, 3).unwrap();
        let before = m.clone();
        let curve = train(&mut m, &data, &SgdConfig::new(0.01, 0.9, 4, 0, 0), 10).unwrap();
        assert_eq!(m, before);
        assert!(curve.points.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let (cfg, data) = tiny();
        let sgd = SgdConfig::new(0.02, 0.9, 4, 30, 5);
        let mut a = DiffusionModel::new(&cfg, 16, 3).unwrap();
        let mut b = DiffusionModel::new(&cfg, 16, 3).unwrap();
        let ca = train(&mut a, &data, &sgd, 5).unwrap();
        let cb = train(&mut b, &data, &sgd, 5).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a, b);
        assert_eq!(ca.points.len(), 7);
    }

    #[test]
    fn divergence_is_reported() {
        let (cfg, data) = tiny();
        let mut m = DiffusionModel::new(&cfg, 16, 3).unwrap();
        let sgd = SgdConfig::new(1e6, 0.9, 4, 50, 5);
        assert!(matches!(train(&mut m, &data, &sgd, 5), Err(Error::Diverged { .. })));
    }

    #[test]
    fn empty_members() {
        let (cfg, _) = tiny();
        let mut m = DiffusionModel::new(&cfg, 16, 3).unwrap();
        assert!(train(&mut m, &[], &SgdConfig::new(0.01, 0.0, 4, 1, 0), 1).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let (cfg, _) = tiny();
        let m = DiffusionModel::new(&cfg, 16, 3).unwrap();
        let json = serde_json::to_string(&m.to_checkpoint(3, 0)).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(DiffusionModel::from_checkpoint(&back).unwrap(), m);
    }
}
