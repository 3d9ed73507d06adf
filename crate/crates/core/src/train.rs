//! Mini-batch ELBO training for all head variants.
//!
//! Each step minimizes `NLL + kl_weight · KL`, the negated evidence lower
//! bound with the expected log-likelihood estimated from one posterior
//! sample per batch.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{batch_indices, LabeledFeatureSet};
use crate::error::{Error, Result};
use crate::layers::Phase;
use crate::model::Head;
use crate::seeding::sub_seed;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// How the KL term is scaled in each mini-batch loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlWeightMode {
    /// `1 / |train set|`
    OneOverN,
    /// `1 / batches per epoch`
    OneOverBatches,
    Constant(f64),
}

impl KlWeightMode {
    pub fn weight(self, n: usize, batches_per_epoch: usize) -> f64 {
        match self {
            KlWeightMode::OneOverN => 1.0 / n as f64,
            KlWeightMode::OneOverBatches => 1.0 / batches_per_epoch as f64,
            KlWeightMode::Constant(c) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub kl_weight_mode: KlWeightMode,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
            kl_weight_mode: KlWeightMode::OneOverN,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let KlWeightMode::Constant(c) = self.kl_weight_mode {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("kl weight must be non-negative, got {c}")));
            }
        }
        match self.optimizer {
            Optimizer::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => Err(
                Error::Config(format!("momentum must lie in [0, 1), got {momentum}")),
            ),
            Optimizer::Adam { beta1, beta2, eps }
                if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) =>
            {
                Err(Error::Config("Adam needs betas in [0, 1) and eps > 0".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-example negative log-likelihood.
    pub nll: f64,
    /// Mean over batches of the unweighted KL term.
    pub kl: f64,
    /// Mean per-example loss, `nll + kl_weight · kl`.
    pub loss: f64,
    pub accuracy: f64,
    /// Wall-clock time; the only field that is not reproducible.
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,nll,kl,loss,accuracy,seconds\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:?},{:?},{:?},{:?},{:.6}\n",
                e.epoch, e.nll, e.kl, e.loss, e.accuracy, e.seconds
            ));
        }
        out
    }

    /// Equality on every reproducible field (all but `seconds`).
    pub fn same_trajectory(&self, other: &TrainReport) -> bool {
        self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.nll.to_bits() == b.nll.to_bits()
                    && a.kl.to_bits() == b.kl.to_bits()
                    && a.loss.to_bits() == b.loss.to_bits()
                    && a.accuracy.to_bits() == b.accuracy.to_bits()
            })
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.accuracy)
    }
}

/// Records `nll(log_probs, labels) + kl_weight · kl_total`.
pub fn elbo_loss(
    tape: &mut Tape,
    log_probs: Var,
    labels: &[usize],
    kl_total: Var,
    kl_weight: f64,
) -> Result<Var> {
    if !(kl_weight >= 0.0 && kl_weight.is_finite()) {
        return Err(Error::Contract(format!(
            "kl_weight must be non-negative, got {kl_weight}"
        )));
    }
    let nll = tape.nll(log_probs, labels)?;
    let kl = tape.scale(kl_total, kl_weight)?;
    tape.add(nll, kl)
}

/// Per-parameter optimizer memory.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// Applies one update in place. SGD: `v ← μv − lr·g; p ← p + v`.
/// Adam: bias-corrected first/second moment update.
pub fn optimizer_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    state: &mut OptimizerState,
    optimizer: &Optimizer,
    learning_rate: f64,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Contract(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Contract(format!(
                "parameter shape {:?} does not match gradient shape {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    if state.first.is_empty() {
        state.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.second = params.iter().map(|p| vec![0.0; p.len()]).collect();
    } else if state.first.len() != params.len()
        || state.first.iter().zip(params.iter()).any(|(s, p)| s.len() != p.len())
    {
        return Err(Error::Contract("optimizer state does not match parameters".into()));
    }
    state.step += 1;
    let t = state.step as f64;

    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let pd = p.data_mut();
        match *optimizer {
            Optimizer::Sgd { momentum } => {
                let v = &mut state.first[i];
                for ((pv, &gv), vv) in pd.iter_mut().zip(g.data()).zip(v.iter_mut()) {
                    *vv = momentum * *vv - learning_rate * gv;
                    *pv += *vv;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powf(t);
                let c2 = 1.0 - beta2.powf(t);
                let (m, v) = (&mut state.first[i], &mut state.second[i]);
                for (j, (pv, &gv)) in pd.iter_mut().zip(g.data()).enumerate() {
                    m[j] = beta1 * m[j] + (1.0 - beta1) * gv;
                    v[j] = beta2 * v[j] + (1.0 - beta2) * gv * gv;
                    let mh = m[j] / c1;
                    let vh = v[j] / c2;
                    *pv -= learning_rate * mh / (vh.sqrt() + eps);
                }
            }
        }
        if pd.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("optimizer update of parameter {i}")));
        }
    }
    Ok(())
}

fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn checked_labels(data: &LabeledFeatureSet, k: usize) -> Result<Vec<usize>> {
    data.labels()
        .iter()
        .map(|&l| {
            if l < 0 || l as usize >= k {
                Err(Error::Data(format!(
                    "training label {l} outside 0..{k} (OOD rows cannot be trained on)"
                )))
            } else {
                Ok(l as usize)
            }
        })
        .collect()
}

/// One ELBO evaluation with its gradients, for a fixed noise draw.
pub struct LossEval {
    pub loss: f64,
    pub nll: f64,
    pub kl: f64,
    pub log_probs: Tensor,
    pub grads: Vec<Tensor>,
}

/// Evaluates the loss and its gradients with respect to every head
/// parameter (in [`Head::parameters`] order).
pub fn loss_and_grads(
    head: &Head,
    x: &Tensor,
    labels: &[usize],
    noise: &crate::model::NoiseBundle,
    kl_weight: f64,
) -> Result<LossEval> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone())?;
    let mut params = Vec::new();
    let out = head.forward_on_tape(&mut tape, xv, noise, Phase::Train, &mut params)?;
    let loss = elbo_loss(&mut tape, out.log_probs, labels, out.kl_total, kl_weight)?;
    let kl = tape.value(out.kl_total).data()[0];
    let log_probs = tape.value(out.log_probs).clone();
    let nll = -labels
        .iter()
        .enumerate()
        .map(|(r, &y)| log_probs.get2(r, y))
        .sum::<f64>()
        / labels.len() as f64;
    let loss_value = tape.value(loss).data()[0];
    let mut grads = tape.backward(loss)?;
    let grads = params
        .iter()
        .map(|&p| grads.take(p).expect("parameter leaf has a gradient"))
        .collect();
    Ok(LossEval {
        loss: loss_value,
        nll,
        kl,
        log_probs,
        grads,
    })
}

/// Trains `head` on `data`. Deterministic given `cfg.seed`.
pub fn train(head: &Head, data: &LabeledFeatureSet, cfg: &TrainConfig) -> Result<(Head, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if data.num_features() != head.input_dim() {
        return Err(Error::dim(
            "train",
            &[head.input_dim()],
            &[data.num_features()],
        ));
    }
    let labels = checked_labels(data, head.num_classes())?;
    let features = data.feature_tensor()?;
    let n = data.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let kl_weight = cfg.kl_weight_mode.weight(n, batches_per_epoch);

    let mut head = head.clone();
    let mut state = OptimizerState::new();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, u64::MAX));
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let order = batch_indices(n, cfg.batch_size, sub_seed(cfg.seed, epoch as u64), cfg.shuffle)?;
        let (mut nll_sum, mut kl_sum, mut loss_sum, mut correct) = (0.0, 0.0, 0.0, 0usize);
        for (b, idx) in order.iter().enumerate() {
            let diverged = |e: Error| Error::Diverged {
                epoch,
                batch: b,
                reason: e.to_string(),
            };
            let x = features.select_rows(idx)?;
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let noise = head.sample_noise(idx.len(), Phase::Train, &mut noise_rng);
            let eval = loss_and_grads(&head, &x, &y, &noise, kl_weight).map_err(|e| match e {
                Error::Numeric(_) => diverged(e),
                e => e,
            })?;
            let m = idx.len() as f64;
            nll_sum += eval.nll * m;
            loss_sum += eval.loss * m;
            kl_sum += eval.kl;
            correct += y
                .iter()
                .enumerate()
                .filter(|(r, &yy)| argmax_row(eval.log_probs.row(*r)) == yy)
                .count();
            let grad_refs: Vec<&Tensor> = eval.grads.iter().collect();
            let mut params = head.parameters_mut();
            optimizer_step(&mut params, &grad_refs, &mut state, &cfg.optimizer, cfg.learning_rate)
                .map_err(|e| match e {
                    Error::Numeric(_) => diverged(e),
                    e => e,
                })?;
        }
        report.epochs.push(EpochStats {
            epoch,
            nll: nll_sum / n as f64,
            kl: kl_sum / order.len() as f64,
            loss: loss_sum / n as f64,
            accuracy: correct as f64 / n as f64,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok((head, report))
}
