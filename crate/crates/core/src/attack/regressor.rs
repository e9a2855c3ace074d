use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::pinball::check_alpha;
use crate::error::{Error, Result};
use crate::ndcore::{clip_grad_norm, Activation, Architecture, Mlp, MlpRecord, Sgd, SgdConfig, Tape, Tensor};

/// Monotone map applied to raw t-errors before regression.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreTransform {
    /// Natural log; scores must be positive.
    #[default]
    Log,
    Identity,
}

impl ScoreTransform {
    pub fn apply(self, score: f64) -> Result<f64> {
        match self {
            ScoreTransform::Log if score > 0.0 && score.is_finite() => Ok(score.ln()),
            ScoreTransform::Log => Err(Error::Transform(score)),
            ScoreTransform::Identity => Ok(score),
        }
    }
}

/// Shape of a weak attacker: an input layer, `blocks` residual hidden
/// layers of width `width`, and one linear head per quantile level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressorConfig {
    pub width: usize,
    #[serde(default = "two")]
    pub blocks: usize,
    #[serde(default)]
    pub transform: ScoreTransform,
}

fn two() -> usize {
    2
}

impl RegressorConfig {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            blocks: 2,
            transform: ScoreTransform::Log,
        }
    }

    pub fn architecture(&self, input: usize, heads: usize) -> Architecture {
        let mut widths = vec![input];
        widths.extend(std::iter::repeat_n(self.width, self.blocks + 1));
        widths.push(heads);
        Architecture {
            widths,
            activation: Activation::Silu,
            residual: true,
        }
    }

    pub fn param_count(&self, input: usize, heads: usize) -> usize {
        self.architecture(input, heads).param_count()
    }

    /// The width whose parameter count is closest to `target`.
    pub fn width_for_params(target: usize, input: usize, heads: usize, blocks: usize) -> usize {
        let count = |w: usize| {
            RegressorConfig {
                width: w,
                blocks,
                transform: ScoreTransform::Log,
            }
            .param_count(input, heads)
        };
        let mut best = 1;
        for w in 1..=4096 {
            if count(w).abs_diff(target) < count(best).abs_diff(target) {
                best = w;
            }
            if count(w) > target {
                break;
            }
        }
        best
    }
}

/// Multi-head quantile regressor over flattened examples. Heads predict
/// standardised transformed scores; outputs are mapped back and sorted
/// across levels so predictions never cross.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileRegressor {
    net: Mlp,
    alphas: Vec<f64>,
    transform: ScoreTransform,
    target_mean: f64,
    target_scale: f64,
}

pub(crate) fn validate_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() {
        return Err(Error::Config("at least one quantile level is required".into()));
    }
    for &a in alphas {
        check_alpha(a)?;
    }
    if alphas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("quantile levels must be strictly increasing, got {alphas:?}")));
    }
    Ok(())
}

/// Lower order statistic: the `⌈α·n⌉`-th smallest value (1-based).
pub(crate) fn lower_quantile(sorted: &[f64], alpha: f64) -> f64 {
    let n = sorted.len();
    let k = ((alpha * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

impl QuantileRegressor {
    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn transform(&self) -> ScoreTransform {
        self.transform
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn alpha_index(&self, alpha: f64) -> Result<usize> {
        self.alphas
            .iter()
            .position(|&a| (a - alpha).abs() <= 1e-12 * alpha.max(1e-300))
            .ok_or(Error::UnknownAlpha(alpha))
    }

    /// Predicted quantiles on the transformed scale, `(batch, levels)`,
    /// sorted ascending within each row.
    pub fn predict(&self, features: &Tensor) -> Result<Tensor> {
        let mut out = self.net.forward(features)?;
        let k = self.alphas.len();
        for row in out.data_mut().chunks_mut(k) {
            for v in row.iter_mut() {
                *v = self.target_mean + self.target_scale * *v;
            }
            row.sort_by(f64::total_cmp);
        }
        Ok(out)
    }

    pub fn to_record(&self, seed: u64, steps: usize) -> RegressorRecord {
        RegressorRecord {
            network: self.net.to_record(seed, steps),
            alphas: self.alphas.clone(),
            transform: self.transform,
            target_mean: self.target_mean,
            target_scale: self.target_scale,
        }
    }

    pub fn from_record(rec: &RegressorRecord) -> Result<Self> {
        validate_alphas(&rec.alphas)?;
        let net = Mlp::from_record(&rec.network)?;
        if net.architecture().output_width() != rec.alphas.len() {
            return Err(Error::Contract(format!(
                "{} heads for {} quantile levels",
                net.architecture().output_width(),
                rec.alphas.len()
            )));
        }
        Ok(Self {
            net,
            alphas: rec.alphas.clone(),
            transform: rec.transform,
            target_mean: rec.target_mean,
            target_scale: rec.target_scale,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressorRecord {
    pub network: MlpRecord,
    pub alphas: Vec<f64>,
    pub transform: ScoreTransform,
    pub target_mean: f64,
    pub target_scale: f64,
}

/// Fits a quantile regressor by minimising the pinball loss summed over
/// heads and averaged over the minibatch. `features` is `(n, d)`; `scores`
/// are raw scores, one per row.
///
/// Targets are standardised; each head starts at the marginal quantile of
/// its level with zero weights, so training learns per-example corrections
/// to the marginal threshold.
pub fn train_quantile(
    features: &Tensor,
    scores: &[f64],
    alphas: &[f64],
    net: &RegressorConfig,
    cfg: &SgdConfig,
) -> Result<QuantileRegressor> {
    validate_alphas(alphas)?;
    cfg.validate()?;
    if scores.is_empty() {
        return Err(Error::Empty("quantile training set"));
    }
    if features.shape().len() != 2 || features.rows() != scores.len() {
        return Err(Error::Dimension {
            op: "train_quantile",
            expected: vec![scores.len()],
            got: features.shape().to_vec(),
        });
    }
    let y: Vec<f64> = scores
        .iter()
        .map(|&s| net.transform.apply(s))
        .collect::<Result<_>>()?;
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    let ys: Vec<f64> = y.iter().map(|v| (v - mean) / scale).collect();

    let arch = net.architecture(features.cols(), alphas.len());
    let mut mlp = Mlp::new(arch, cfg.seed)?;
    let mut sorted = ys.clone();
    sorted.sort_by(f64::total_cmp);
    let last = mlp.params().len() - 1;
    mlp.params_mut()[last - 1].data_mut().fill(0.0);
    for (b, &a) in mlp.params_mut()[last].data_mut().iter_mut().zip(alphas) {
        *b = lower_quantile(&sorted, a);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5157_4e54_494c_4553);
    let mut opt = Sgd::new(cfg);
    let b = cfg.batch_size;
    for step in 0..cfg.steps {
        let idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..n)).collect();
        let x = features.gather_rows(&idx);
        let targets: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();

        let mut tape = Tape::new();
        let params = mlp.bind(&mut tape);
        let xv = tape.leaf(x);
        let pred = mlp.forward_tape(&mut tape, &params, xv)?;
        let elementwise = tape.pinball(pred, &targets, alphas)?;
        let mean = tape.mean(elementwise);
        let loss = tape.scale(mean, alphas.len() as f64);
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::Diverged { step, loss: value });
        }
        let grads = tape.backward(loss)?;
        let mut grads: Vec<Tensor> = params.iter().map(|&p| grads.wrt(&tape, p)).collect();
        if let Some(c) = cfg.clip_norm {
            clip_grad_norm(&mut grads, c);
        }
        opt.step(mlp.params_mut(), &grads, cfg.lr_at(step))?;
    }
    if !mlp.params().iter().all(Tensor::is_finite) {
        return Err(Error::Diverged {
            step: cfg.steps,
            loss: f64::NAN,
        });
    }
    Ok(QuantileRegressor {
        net: mlp,
        alphas: alphas.to_vec(),
        transform: net.transform,
        target_mean: mean,
        target_scale: scale,
    })
}
