//! Mean-field Gaussian posteriors over weights.
//!
//! A [`DiagonalGaussian`] stores a mean and a pre-softplus scale `rho` per
//! element, so `std = ln(1 + e^rho)` is positive for every finite `rho`.
//! Samples are reparameterized as `mu + std ∘ eps`, which keeps them
//! differentiable in both `mu` and `rho`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, CustomOp, Tape, Tensor, Var};

/// Independent Gaussian prior shared by every element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub mean: f64,
    pub std: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            mean: 0.0,
            std: 1.0,
        }
    }
}

impl PriorSpec {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0 && std.is_finite() && mean.is_finite()) {
            return Err(Error::Config(format!(
                "prior needs finite mean and positive std, got N({mean}, {std}²)"
            )));
        }
        Ok(PriorSpec { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    mu: Tensor,
    rho: Tensor,
}

/// Elementwise softplus of `rho`.
pub fn softplus_std(rho: &Tensor) -> Tensor {
    rho.map(tensor::softplus)
}

impl DiagonalGaussian {
    pub fn new(mu: Tensor, rho: Tensor) -> Result<Self> {
        if mu.shape() != rho.shape() {
            return Err(Error::dim("DiagonalGaussian", mu.shape(), rho.shape()));
        }
        Ok(DiagonalGaussian { mu, rho })
    }

    pub fn mu(&self) -> &Tensor {
        &self.mu
    }

    pub fn rho(&self) -> &Tensor {
        &self.rho
    }

    pub fn mu_mut(&mut self) -> &mut Tensor {
        &mut self.mu
    }

    pub fn rho_mut(&mut self) -> &mut Tensor {
        &mut self.rho
    }

    /// Both parameter tensors at once, for optimizers.
    pub fn parts_mut(&mut self) -> (&mut Tensor, &mut Tensor) {
        (&mut self.mu, &mut self.rho)
    }

    pub fn shape(&self) -> &[usize] {
        self.mu.shape()
    }

    pub fn std(&self) -> Tensor {
        softplus_std(&self.rho)
    }

    /// `mu + std ∘ eps` for a caller-supplied standard-normal draw.
    pub fn sample(&self, eps: &Tensor) -> Result<Tensor> {
        if eps.shape() != self.mu.shape() {
            return Err(Error::dim("sample", self.mu.shape(), eps.shape()));
        }
        let data = self
            .mu
            .data()
            .iter()
            .zip(self.rho.data())
            .zip(eps.data())
            .map(|((&m, &r), &e)| m + tensor::softplus(r) * e)
            .collect();
        Tensor::new(self.mu.shape().to_vec(), data)
    }

    /// Closed-form `KL[q || p]` summed over elements.
    pub fn kl_to_prior(&self, prior: &PriorSpec) -> f64 {
        self.mu
            .data()
            .iter()
            .zip(self.rho.data())
            .map(|(&m, &r)| kl_normal(m, tensor::softplus(r), prior))
            .sum()
    }
}

fn kl_normal(mean_q: f64, std_q: f64, prior: &PriorSpec) -> f64 {
    let d = mean_q - prior.mean;
    (prior.std / std_q).ln() + (std_q * std_q + d * d) / (2.0 * prior.std * prior.std) - 0.5
}

/// Records `mu + softplus(rho) ∘ eps` on the tape, with `eps` a constant.
pub fn sample_on_tape(tape: &mut Tape, mu: Var, rho: Var, eps: &Tensor) -> Result<Var> {
    if tape.value(mu).shape() != eps.shape() {
        return Err(Error::dim("sample", tape.value(mu).shape(), eps.shape()));
    }
    let std = tape.softplus(rho)?;
    let eps = tape.constant(eps.clone())?;
    let scaled = tape.mul(std, eps)?;
    tape.add(mu, scaled)
}

/// Records the analytic KL to `prior` as a scalar node depending on
/// `mu` and `rho`.
pub fn kl_on_tape(tape: &mut Tape, mu: Var, rho: Var, prior: PriorSpec) -> Result<Var> {
    if tape.value(mu).shape() != tape.value(rho).shape() {
        return Err(Error::dim(
            "kl_to_prior",
            tape.value(mu).shape(),
            tape.value(rho).shape(),
        ));
    }
    tape.custom(&[mu, rho], Box::new(KlToPrior { prior }))
}

struct KlToPrior {
    prior: PriorSpec,
}

impl CustomOp for KlToPrior {
    fn name(&self) -> &'static str {
        "kl_to_prior"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let kl = inputs[0]
            .data()
            .iter()
            .zip(inputs[1].data())
            .map(|(&m, &r)| kl_normal(m, tensor::softplus(r), &self.prior))
            .sum();
        Tensor::scalar(kl)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let g = grad.data()[0];
        let var_p = self.prior.std * self.prior.std;
        let (mu, rho) = (inputs[0], inputs[1]);
        let d_mu = mu.map(|m| g * (m - self.prior.mean) / var_p);
        let d_rho = rho.map(|r| {
            let s = tensor::softplus(r);
            g * (-1.0 / s + s / var_p) * tensor::sigmoid(r)
        });
        vec![d_mu, d_rho]
    }
}
