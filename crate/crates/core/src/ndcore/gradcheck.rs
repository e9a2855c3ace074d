use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::ndcore::{Architecture, Mlp, Tape, Tensor};

/// Agreement between tape gradients and central differences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub coordinates: usize,
    /// Coordinates whose relative error is below the tolerance.
    pub within: usize,
    pub worst: f64,
}

impl GradCheck {
    pub fn fraction(&self) -> f64 {
        self.within as f64 / self.coordinates as f64
    }
}

fn mse(mlp: &Mlp, x: &Tensor, y: &Tensor) -> Result<f64> {
    let out = mlp.forward(x)?;
    let n = out.len() as f64;
    Ok(out.data().iter().zip(y.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n)
}

/// Checks every parameter of a randomly initialised `arch` under an MSE loss
/// on a random batch, with step `eps`. Gradients smaller than `1e-8` in
/// both estimates count as agreeing.
pub fn gradient_check(arch: &Architecture, batch: usize, seed: u64, eps: f64, tol: f64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mlp = Mlp::new(arch.clone(), seed)?;
    let mut random = |cols: usize| {
        let data = (0..batch * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(vec![batch, cols], data)
    };
    let x = random(arch.input_width())?;
    let y = random(arch.output_width())?;

    let mut tape = Tape::new();
    let params = mlp.bind(&mut tape);
    let xv = tape.leaf(x.clone());
    let yv = tape.leaf(y.clone());
    let pred = mlp.forward_tape(&mut tape, &params, xv)?;
    let loss = tape.mse(pred, yv)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = params.iter().map(|&p| grads.wrt(&tape, p)).collect();

    let mut out = GradCheck {
        coordinates: 0,
        within: 0,
        worst: 0.0,
    };
    for (p, g) in analytic.iter().enumerate() {
        for j in 0..g.len() {
            let orig = mlp.params()[p].data()[j];
            mlp.params_mut()[p].data_mut()[j] = orig + eps;
            let up = mse(&mlp, &x, &y)?;
            mlp.params_mut()[p].data_mut()[j] = orig - eps;
            let down = mse(&mlp, &x, &y)?;
            mlp.params_mut()[p].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = g.data()[j];
            let scale = a.abs().max(numeric.abs());
            let rel = if scale < 1e-8 { 0.0 } else { (a - numeric).abs() / scale };
            out.worst = out.worst.max(rel);
            out.within += usize::from(rel < tol);
            out.coordinates += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::Activation;

    #[test]
    fn small_networks_agree() {
        for activation in [Activation::Silu, Activation::Tanh] {
            let arch = Architecture {
                widths: vec![3, 5, 5, 2],
                activation,
                residual: true,
            };
            let r = gradient_check(&arch, 3, 1, 1e-5, 1e-5).unwrap();
            assert_eq!(r.coordinates, arch.param_count());
            assert_eq!(r.within, r.coordinates, "{r:?}");
        }
    }
}
