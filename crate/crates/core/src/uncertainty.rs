//! Monte Carlo predictive inference and the entropy-based uncertainty
//! measures derived from it.
//!
//! All entropies are in nats, with probabilities clamped to
//! `[PROB_FLOOR, 1]` before taking logs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Phase;
use crate::model::Head;
use crate::seeding::sub_seed;
use crate::tensor::Tensor;

pub const PROB_FLOOR: f64 = 1e-12;
pub const DEFAULT_MC_SAMPLES: usize = 40;

const ROW_SUM_TOL: f64 = 1e-9;

/// `T` sampled class-probability rows for one example, plus their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    sample_probs: Vec<f64>,
    num_classes: usize,
    mean_probs: Vec<f64>,
}

impl PredictiveDistribution {
    /// Validates `T × K` rows (each in `[0, 1]` and summing to 1 within
    /// 1e-9) and computes the columnwise mean.
    pub fn new(sample_probs: Vec<f64>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 || sample_probs.is_empty() || !sample_probs.len().is_multiple_of(num_classes) {
            return Err(Error::Data(format!(
                "{} probabilities do not form rows of {num_classes} classes",
                sample_probs.len()
            )));
        }
        for (t, row) in sample_probs.chunks(num_classes).enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Data(format!("pass {t}: probability outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Data(format!("pass {t}: probabilities sum to {s}")));
            }
        }
        let mean_probs = shifted_mean(&sample_probs, num_classes);
        Ok(PredictiveDistribution {
            sample_probs,
            num_classes,
            mean_probs,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.sample_probs.len() / self.num_classes
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn sample_probs(&self) -> &[f64] {
        &self.sample_probs
    }

    pub fn sample(&self, t: usize) -> &[f64] {
        &self.sample_probs[t * self.num_classes..(t + 1) * self.num_classes]
    }

    pub fn mean_probs(&self) -> &[f64] {
        &self.mean_probs
    }
}

/// Columnwise mean written as `first + mean(row − first)`: identical rows
/// reproduce the first row bit for bit, so a deterministic head yields
/// exactly zero disagreement.
fn shifted_mean(rows: &[f64], k: usize) -> Vec<f64> {
    let first = &rows[..k];
    let t = (rows.len() / k) as f64;
    let mut acc = vec![0.0; k];
    for row in rows.chunks(k).skip(1) {
        for ((a, &x), &f) in acc.iter_mut().zip(row).zip(first) {
            *a += x - f;
        }
    }
    first.iter().zip(&acc).map(|(&f, &a)| f + a / t).collect()
}

/// Shannon entropy (nats) of a probability vector, clamped.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .map(|&p| {
            let q = p.clamp(PROB_FLOOR, 1.0);
            q * q.ln()
        })
        .sum::<f64>()
}

/// Entropy of the mean predictive distribution.
pub fn predictive_entropy(pd: &PredictiveDistribution) -> f64 {
    entropy(&pd.mean_probs)
}

/// Mean over passes of the per-pass entropy.
pub fn expected_entropy(pd: &PredictiveDistribution) -> f64 {
    let h: Vec<f64> = pd.sample_probs.chunks(pd.num_classes).map(entropy).collect();
    let first = h[0];
    first + h.iter().skip(1).map(|&x| x - first).sum::<f64>() / h.len() as f64
}

/// Mutual information between prediction and weights: predictive entropy
/// minus expected entropy.
pub fn bald(pd: &PredictiveDistribution) -> f64 {
    predictive_entropy(pd) - expected_entropy(pd)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub predicted_class: usize,
    pub confidence: f64,
    pub predictive_entropy: f64,
    pub expected_entropy: f64,
    pub bald: f64,
}

/// Summarizes a predictive distribution; argmax ties go to the lowest
/// class index.
pub fn report(pd: &PredictiveDistribution) -> UncertaintyReport {
    let mean = pd.mean_probs();
    let mut best = 0;
    for (i, &p) in mean.iter().enumerate() {
        if p > mean[best] {
            best = i;
        }
    }
    let pe = predictive_entropy(pd);
    let ee = expected_entropy(pd);
    UncertaintyReport {
        predicted_class: best,
        confidence: mean[best],
        predictive_entropy: pe,
        expected_entropy: ee,
        bald: pe - ee,
    }
}

/// Runs `t` stochastic forward passes over every row of `x`.
///
/// Pass `i` draws its noise from a generator seeded with
/// `sub_seed(seed, i)`, so results do not depend on how passes are
/// scheduled across threads. Deterministic heads yield `t` identical rows.
pub fn mc_predict(head: &Head, x: &Tensor, t: usize, seed: u64) -> Result<Vec<PredictiveDistribution>> {
    if t < 1 {
        return Err(Error::Config("need at least one Monte Carlo sample".into()));
    }
    let m = x.rows();
    let k = head.num_classes();
    let passes: Vec<Tensor> = (0..t)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, i as u64));
            let noise = head.sample_noise(m, Phase::McInference, &mut rng);
            head.forward(x, &noise, Phase::McInference).map(|(lp, _)| lp)
        })
        .collect::<Result<_>>()?;

    (0..m)
        .map(|r| {
            let mut rows = Vec::with_capacity(t * k);
            for lp in &passes {
                rows.extend(lp.row(r).iter().map(|v| v.exp()));
            }
            PredictiveDistribution::new(rows, k)
        })
        .collect()
}
