use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::autodiff::{silu, Tape, Var};
use crate::ndcore::tensor::{add_row, matmul, Tensor};

pub const RECORD_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => silu(x),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// Shape of a fully connected network. Hidden layers whose input and output
/// widths match get a skip connection when `residual` is set; the output
/// layer is always plain affine.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub residual: bool,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::Config(format!(
                "an MLP needs at least two positive widths, got {:?}",
                self.widths
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        self.widths[self.widths.len() - 1]
    }

    fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    fn skip(&self, layer: usize) -> bool {
        self.residual && layer + 1 < self.layers() && self.widths[layer] == self.widths[layer + 1]
    }
}

/// Multi-layer perceptron with parameters stored as `[w0, b0, w1, b1, ...]`.
/// Weights are `in×out` so a batch multiplies on the left.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    arch: Architecture,
    params: Vec<Tensor>,
}

impl Mlp {
    /// Uniform `±1/√fan_in` initialisation.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(2 * arch.layers());
        for w in arch.widths.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let weight = (0..w[0] * w[1])
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let bias = (0..w[1]).map(|_| rng.random_range(-bound..bound)).collect();
            params.push(Tensor::new(vec![w[0], w[1]], weight)?);
            params.push(Tensor::new(vec![w[1]], bias)?);
        }
        Ok(Self { arch, params })
    }

    pub fn from_params(arch: Architecture, params: Vec<Tensor>) -> Result<Self> {
        arch.validate()?;
        if params.len() != 2 * arch.layers() {
            return Err(Error::Contract(format!(
                "expected {} parameter tensors, got {}",
                2 * arch.layers(),
                params.len()
            )));
        }
        for (l, w) in arch.widths.windows(2).enumerate() {
            if params[2 * l].shape() != [w[0], w[1]] || params[2 * l + 1].shape() != [w[1]] {
                return Err(Error::Dimension {
                    op: "Mlp::from_params",
                    expected: vec![w[0], w[1]],
                    got: params[2 * l].shape().to_vec(),
                });
            }
        }
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.arch.input_width() {
            return Err(Error::Dimension {
                op: "Mlp::forward",
                expected: vec![x.shape()[0], self.arch.input_width()],
                got: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Inference pass; `x` is `(batch, input width)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let last = self.arch.layers() - 1;
        let mut h = x.clone();
        for l in 0..=last {
            let z = add_row(&matmul(&h, &self.params[2 * l])?, &self.params[2 * l + 1])?;
            h = if l == last {
                z
            } else {
                let a = z.map(|v| self.arch.activation.apply(v));
                if self.arch.skip(l) {
                    h.axpby(1.0, &a, 1.0)?
                } else {
                    a
                }
            };
        }
        Ok(h)
    }

    /// Records the parameters as leaves on `tape`, in storage order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.clone())).collect()
    }

    /// Differentiable forward pass using parameter leaves from [`Mlp::bind`].
    pub fn forward_tape(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        self.check_input(tape.value(x))?;
        let last = self.arch.layers() - 1;
        let mut h = x;
        for l in 0..=last {
            let z = tape.matmul(h, params[2 * l])?;
            let z = tape.add_bias(z, params[2 * l + 1])?;
            h = if l == last {
                z
            } else {
                let a = match self.arch.activation {
                    Activation::Silu => tape.silu(z),
                    Activation::Tanh => tape.tanh(z),
                };
                if self.arch.skip(l) {
                    tape.add(h, a)?
                } else {
                    a
                }
            };
        }
        Ok(h)
    }

    pub fn to_record(&self, seed: u64, steps: usize) -> MlpRecord {
        MlpRecord {
            format_version: RECORD_VERSION,
            architecture: self.arch.clone(),
            params: self.params.iter().flat_map(|p| p.data().iter().copied()).collect(),
            seed,
            steps,
        }
    }

    pub fn from_record(record: &MlpRecord) -> Result<Self> {
        if record.format_version != RECORD_VERSION {
            return Err(Error::Contract(format!(
                "unsupported parameter record version {}",
                record.format_version
            )));
        }
        let arch = record.architecture.clone();
        arch.validate()?;
        if record.params.len() != arch.param_count() {
            return Err(Error::Dimension {
                op: "Mlp::from_record",
                expected: vec![arch.param_count()],
                got: vec![record.params.len()],
            });
        }
        let mut flat = record.params.iter().copied();
        let mut params = Vec::new();
        for w in arch.widths.windows(2) {
            params.push(Tensor::new(vec![w[0], w[1]], flat.by_ref().take(w[0] * w[1]).collect())?);
            params.push(Tensor::new(vec![w[1]], flat.by_ref().take(w[1]).collect())?);
        }
        Self::from_params(arch, params)
    }
}

/// Serialised network: architecture, flat parameters, and provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpRecord {
    pub format_version: u32,
    pub architecture: Architecture,
    pub params: Vec<f64>,
    pub seed: u64,
    pub steps: usize,
}
