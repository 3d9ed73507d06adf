//! Dense, variational dense (reparameterized or Flipout) and dropout layers.
//!
//! Layers never draw randomness themselves: every forward takes its noise
//! explicitly, so a forward pass is a pure function of parameters, input
//! and noise.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dist::{self, DiagonalGaussian, PriorSpec};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Reparam,
    Flipout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    McInference,
    DeterministicInference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseDeterministic {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DenseDeterministic {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.cols()] {
            return Err(Error::dim("DenseDeterministic", weight.shape(), bias.shape()));
        }
        Ok(DenseDeterministic { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    /// Registers `weight`, `bias` as parameters (in that order, appended to
    /// `params`) and records `x·W + b`.
    pub fn forward(&self, tape: &mut Tape, x: Var, params: &mut Vec<Var>) -> Result<Var> {
        check_input(tape, x, self.in_dim())?;
        let w = tape.param(self.weight.clone())?;
        let b = tape.param(self.bias.clone())?;
        params.extend([w, b]);
        let xw = tape.matmul(x, w)?;
        tape.add(xw, b)
    }
}

fn check_input(tape: &Tape, x: Var, in_dim: usize) -> Result<()> {
    let shape = tape.value(x).shape();
    if shape.len() != 2 || shape[1] != in_dim {
        return Err(Error::dim("dense forward", shape, &[shape[0], in_dim]));
    }
    Ok(())
}

/// Per-example sign vectors for Flipout.
#[derive(Debug, Clone, PartialEq)]
pub struct FlipoutSigns {
    /// `m × in`, entries ±1.
    pub input: Tensor,
    /// `m × out`, entries ±1.
    pub output: Tensor,
}

/// One noise draw for a variational layer.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalNoise {
    /// `in × out` standard-normal draw for the weights.
    pub weight_eps: Tensor,
    /// `out` standard-normal draw for the bias.
    pub bias_eps: Tensor,
    /// Present exactly when the layer uses Flipout.
    pub signs: Option<FlipoutSigns>,
}

fn normal_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = StandardNormal.sample(rng);
    }
    t
}

fn rademacher_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = if rng.random::<bool>() { 1.0 } else { -1.0 };
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseVariational {
    pub weight: DiagonalGaussian,
    pub bias: DiagonalGaussian,
    pub estimator: Estimator,
    pub prior: PriorSpec,
}

impl DenseVariational {
    pub fn new(
        weight: DiagonalGaussian,
        bias: DiagonalGaussian,
        estimator: Estimator,
        prior: PriorSpec,
    ) -> Result<Self> {
        let ws = weight.shape();
        if ws.len() != 2 || bias.shape() != [ws[1]] {
            return Err(Error::dim("DenseVariational", ws, bias.shape()));
        }
        Ok(DenseVariational {
            weight,
            bias,
            estimator,
            prior,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Dense layer at the posterior means.
    pub fn mean_layer(&self) -> DenseDeterministic {
        DenseDeterministic {
            weight: self.weight.mu().clone(),
            bias: self.bias.mu().clone(),
        }
    }

    pub fn kl(&self) -> f64 {
        self.weight.kl_to_prior(&self.prior) + self.bias.kl_to_prior(&self.prior)
    }

    /// Draws noise for a batch of `m` rows matching this layer's estimator.
    pub fn sample_noise<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> VariationalNoise {
        let (i, o) = (self.in_dim(), self.out_dim());
        let weight_eps = normal_tensor(rng, &[i, o]);
        let bias_eps = normal_tensor(rng, &[o]);
        let signs = match self.estimator {
            Estimator::Reparam => None,
            Estimator::Flipout => Some(FlipoutSigns {
                input: rademacher_tensor(rng, &[m, i]),
                output: rademacher_tensor(rng, &[m, o]),
            }),
        };
        VariationalNoise {
            weight_eps,
            bias_eps,
            signs,
        }
    }

    /// All-zero perturbation (signs fixed to +1 for Flipout).
    pub fn zero_noise(&self, m: usize) -> VariationalNoise {
        let (i, o) = (self.in_dim(), self.out_dim());
        VariationalNoise {
            weight_eps: Tensor::zeros(&[i, o]),
            bias_eps: Tensor::zeros(&[o]),
            signs: match self.estimator {
                Estimator::Reparam => None,
                Estimator::Flipout => Some(FlipoutSigns {
                    input: Tensor::full(&[m, i], 1.0),
                    output: Tensor::full(&[m, o], 1.0),
                }),
            },
        }
    }

    /// Registers `weight.mu, weight.rho, bias.mu, bias.rho` as parameters
    /// and records the stochastic forward. Returns `(output, kl)`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        noise: &VariationalNoise,
        params: &mut Vec<Var>,
    ) -> Result<(Var, Var)> {
        check_input(tape, x, self.in_dim())?;
        let (i, o) = (self.in_dim(), self.out_dim());
        if noise.weight_eps.shape() != [i, o] {
            return Err(Error::dim("variational noise", &[i, o], noise.weight_eps.shape()));
        }
        if noise.bias_eps.shape() != [o] {
            return Err(Error::dim("variational noise", &[o], noise.bias_eps.shape()));
        }
        let w_mu = tape.param(self.weight.mu().clone())?;
        let w_rho = tape.param(self.weight.rho().clone())?;
        let b_mu = tape.param(self.bias.mu().clone())?;
        let b_rho = tape.param(self.bias.rho().clone())?;
        params.extend([w_mu, w_rho, b_mu, b_rho]);

        let b = dist::sample_on_tape(tape, b_mu, b_rho, &noise.bias_eps)?;
        let pre = match (self.estimator, &noise.signs) {
            (Estimator::Reparam, None) => {
                let w = dist::sample_on_tape(tape, w_mu, w_rho, &noise.weight_eps)?;
                tape.matmul(x, w)?
            }
            (Estimator::Flipout, Some(signs)) => {
                let m = tape.value(x).rows();
                if signs.input.shape() != [m, i] || signs.output.shape() != [m, o] {
                    return Err(Error::dim(
                        "flipout signs",
                        &[m, i, m, o],
                        &[signs.input.shape(), signs.output.shape()].concat(),
                    ));
                }
                let mean = tape.matmul(x, w_mu)?;
                let std = tape.softplus(w_rho)?;
                let eps = tape.constant(noise.weight_eps.clone())?;
                let delta = tape.mul(std, eps)?;
                let r = tape.constant(signs.input.clone())?;
                let s = tape.constant(signs.output.clone())?;
                let xr = tape.mul(x, r)?;
                let pert = tape.matmul(xr, delta)?;
                let pert = tape.mul(pert, s)?;
                tape.add(mean, pert)?
            }
            (est, _) => {
                return Err(Error::Contract(format!(
                    "noise does not match the layer's {est:?} estimator"
                )))
            }
        };
        let out = tape.add(pre, b)?;

        let kl_w = dist::kl_on_tape(tape, w_mu, w_rho, self.prior)?;
        let kl_b = dist::kl_on_tape(tape, b_mu, b_rho, self.prior)?;
        let kl = tape.add(kl_w, kl_b)?;
        Ok((out, kl))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    rate: f64,
    mc_at_inference: bool,
}

impl DropoutSpec {
    pub fn new(rate: f64, mc_at_inference: bool) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        Ok(DropoutSpec {
            rate,
            mc_at_inference,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn mc_at_inference(&self) -> bool {
        self.mc_at_inference
    }

    /// Whether a mask is applied in `phase`.
    pub fn masks(&self, phase: Phase) -> bool {
        match phase {
            Phase::Train => true,
            Phase::McInference => self.mc_at_inference,
            Phase::DeterministicInference => false,
        }
    }

    /// Inverted dropout: an element is kept when its uniform draw is at
    /// least `rate`, and survivors are scaled by `1 / (1 - rate)`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        uniforms: Option<&Tensor>,
        phase: Phase,
    ) -> Result<Var> {
        if !self.masks(phase) {
            return Ok(x);
        }
        let u = uniforms.ok_or_else(|| {
            Error::Contract(format!("dropout in phase {phase:?} needs mask noise"))
        })?;
        if u.shape() != tape.value(x).shape() {
            return Err(Error::dim("dropout", tape.value(x).shape(), u.shape()));
        }
        let keep_scale = 1.0 / (1.0 - self.rate);
        let mask = u.map(|v| if v >= self.rate { keep_scale } else { 0.0 });
        let mask = tape.constant(mask)?;
        tape.mul(x, mask)
    }
}

/// Uniform `[0, 1)` draws for a dropout mask.
pub fn uniform_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random::<f64>();
    }
    t
}
