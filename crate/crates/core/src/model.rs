//! Three-layer classification heads and their checkpoint format.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dist::{DiagonalGaussian, PriorSpec};
use crate::error::{Error, Result};
use crate::layers::{
    uniform_tensor, DenseDeterministic, DenseVariational, DropoutSpec, Estimator, Phase,
    VariationalNoise,
};
use crate::tensor::{Tape, Tensor, Var};

pub const CHECKPOINT_FORMAT_VERSION: u64 = 1;

/// Initial `rho` for variational layers; softplus(-3) ≈ 0.0486.
pub const INITIAL_RHO: f64 = -3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Deterministic,
    McDropout,
    StochasticVi,
}

impl Variant {
    pub const ALL: [Variant; 3] = [
        Variant::Deterministic,
        Variant::McDropout,
        Variant::StochasticVi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Deterministic => "deterministic",
            Variant::McDropout => "mc-dropout",
            Variant::StochasticVi => "stochastic-vi",
        }
    }

    /// Row label used in comparison tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Variant::Deterministic => "DNN Model",
            Variant::McDropout => "Bayesian DNN (MC Dropout)",
            Variant::StochasticVi => "Bayesian DNN (Stochastic VI)",
        }
    }

    pub fn is_stochastic(self) -> bool {
        !matches!(self, Variant::Deterministic)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?}; expected deterministic, mc-dropout or stochastic-vi"
                ))
            })
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub input_dim: usize,
    pub hidden_dims: [usize; 2],
    pub num_classes: usize,
    pub variant: Variant,
    pub dropout_rate: f64,
    pub estimator: Estimator,
    #[serde(default)]
    pub prior: PriorSpec,
}

impl HeadConfig {
    pub fn new(input_dim: usize, num_classes: usize, variant: Variant) -> Self {
        HeadConfig {
            input_dim,
            hidden_dims: [256, 256],
            num_classes,
            variant,
            dropout_rate: 0.2,
            estimator: Estimator::Flipout,
            prior: PriorSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config(format!(
                "layer widths must be positive: input {}, hidden {:?}",
                self.input_dim, self.hidden_dims
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        DropoutSpec::new(self.dropout_rate, false)?;
        PriorSpec::new(self.prior.mean, self.prior.std)?;
        Ok(())
    }

    /// `(in, out)` of the three dense layers.
    pub fn layer_dims(&self) -> [(usize, usize); 3] {
        let [h1, h2] = self.hidden_dims;
        [(self.input_dim, h1), (h1, h2), (h2, self.num_classes)]
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Layers {
    Dense([DenseDeterministic; 3], DropoutSpec),
    Variational([DenseVariational; 3]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    config: HeadConfig,
    layers: Layers,
}

/// Noise for one forward pass over a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseBundle {
    /// No randomness; valid whenever the head does not mask in this phase.
    None,
    /// Uniform draws for the two hidden-layer dropout masks.
    Dropout(Vec<Tensor>),
    /// One draw per variational layer.
    Variational(Vec<VariationalNoise>),
}

#[derive(Debug, Clone, Copy)]
pub struct HeadForward {
    pub log_probs: Var,
    pub kl_total: Var,
}

fn he_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let mut t = Tensor::zeros(&[fan_in, fan_out]);
    for v in t.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
    t
}

fn tag_layer(i: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Numeric(op) => Error::Numeric(format!("layer {} ({op})", i + 1)),
        e => e,
    }
}

/// Builds a freshly initialized head. Means use He-style fan-in uniform
/// initialization, biases start at zero and every `rho` at
/// [`INITIAL_RHO`].
pub fn build_head(cfg: &HeadConfig, init_seed: u64) -> Result<Head> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    let dims = cfg.layer_dims();
    let layers = match cfg.variant {
        Variant::Deterministic | Variant::McDropout => {
            let dense = dims.map(|(i, o)| DenseDeterministic {
                weight: he_uniform(&mut rng, i, o),
                bias: Tensor::zeros(&[o]),
            });
            Layers::Dense(
                dense,
                DropoutSpec::new(cfg.dropout_rate, cfg.variant == Variant::McDropout)?,
            )
        }
        Variant::StochasticVi => {
            let mut v = Vec::with_capacity(3);
            for (i, o) in dims {
                let weight = DiagonalGaussian::new(
                    he_uniform(&mut rng, i, o),
                    Tensor::full(&[i, o], INITIAL_RHO),
                )?;
                let bias =
                    DiagonalGaussian::new(Tensor::zeros(&[o]), Tensor::full(&[o], INITIAL_RHO))?;
                v.push(DenseVariational::new(weight, bias, cfg.estimator, cfg.prior)?);
            }
            Layers::Variational(v.try_into().expect("three layers"))
        }
    };
    Ok(Head {
        config: cfg.clone(),
        layers,
    })
}

impl Head {
    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn variational_layers(&self) -> Option<&[DenseVariational; 3]> {
        match &self.layers {
            Layers::Variational(v) => Some(v),
            Layers::Dense(..) => None,
        }
    }

    pub fn dense_layers(&self) -> Option<&[DenseDeterministic; 3]> {
        match &self.layers {
            Layers::Dense(d, _) => Some(d),
            Layers::Variational(_) => None,
        }
    }

    /// Parameter tensors in the order `forward` registers them.
    pub fn parameters(&self) -> Vec<&Tensor> {
        match &self.layers {
            Layers::Dense(d, _) => d.iter().flat_map(|l| [&l.weight, &l.bias]).collect(),
            Layers::Variational(v) => v
                .iter()
                .flat_map(|l| [l.weight.mu(), l.weight.rho(), l.bias.mu(), l.bias.rho()])
                .collect(),
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        match &mut self.layers {
            Layers::Dense(d, _) => d
                .iter_mut()
                .flat_map(|l| [&mut l.weight, &mut l.bias])
                .collect(),
            Layers::Variational(v) => v
                .iter_mut()
                .flat_map(|l| {
                    let DenseVariational { weight, bias, .. } = l;
                    let (wm, wr) = weight.parts_mut();
                    let (bm, br) = bias.parts_mut();
                    [wm, wr, bm, br]
                })
                .collect(),
        }
    }

    /// Total KL of the posterior to the prior; zero for non-variational heads.
    pub fn kl(&self) -> f64 {
        match &self.layers {
            Layers::Variational(v) => v.iter().map(DenseVariational::kl).sum(),
            Layers::Dense(..) => 0.0,
        }
    }

    /// Draws the noise one forward pass needs for `m` rows in `phase`.
    pub fn sample_noise<R: Rng + ?Sized>(&self, m: usize, phase: Phase, rng: &mut R) -> NoiseBundle {
        match &self.layers {
            Layers::Dense(_, spec) if spec.masks(phase) => NoiseBundle::Dropout(
                self.config
                    .hidden_dims
                    .iter()
                    .map(|&h| uniform_tensor(rng, &[m, h]))
                    .collect(),
            ),
            Layers::Dense(..) => NoiseBundle::None,
            Layers::Variational(v) if phase == Phase::DeterministicInference => {
                NoiseBundle::Variational(v.iter().map(|l| l.zero_noise(m)).collect())
            }
            Layers::Variational(v) => {
                NoiseBundle::Variational(v.iter().map(|l| l.sample_noise(m, rng)).collect())
            }
        }
    }

    /// Zero perturbation for variational heads; `None` otherwise.
    pub fn zero_noise(&self, m: usize) -> NoiseBundle {
        match &self.layers {
            Layers::Variational(v) => {
                NoiseBundle::Variational(v.iter().map(|l| l.zero_noise(m)).collect())
            }
            Layers::Dense(..) => NoiseBundle::None,
        }
    }

    /// Records a forward pass on `tape`. Parameters are appended to
    /// `params` in [`Head::parameters`] order.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        x: Var,
        noise: &NoiseBundle,
        phase: Phase,
        params: &mut Vec<Var>,
    ) -> Result<HeadForward> {
        let (logits, kl_total) = match &self.layers {
            Layers::Dense(dense, spec) => {
                let masks: [Option<&Tensor>; 2] = match noise {
                    NoiseBundle::Dropout(u) if u.len() == 2 => [Some(&u[0]), Some(&u[1])],
                    NoiseBundle::None => [None, None],
                    _ => {
                        return Err(Error::Contract(
                            "dense head expects dropout noise or none".into(),
                        ))
                    }
                };
                let mut h = x;
                for (i, layer) in dense.iter().enumerate() {
                    h = layer.forward(tape, h, params).map_err(tag_layer(i))?;
                    if i < 2 {
                        h = tape.relu(h).map_err(tag_layer(i))?;
                        h = spec.forward(tape, h, masks[i], phase).map_err(tag_layer(i))?;
                    }
                }
                let zero = tape.constant(Tensor::scalar(0.0)?)?;
                (h, zero)
            }
            Layers::Variational(layers) => {
                let NoiseBundle::Variational(draws) = noise else {
                    return Err(Error::Contract(
                        "variational head expects variational noise".into(),
                    ));
                };
                if draws.len() != 3 {
                    return Err(Error::Contract(format!(
                        "expected 3 layer noise draws, got {}",
                        draws.len()
                    )));
                }
                let mut h = x;
                let mut kl_total: Option<Var> = None;
                for (i, (layer, n)) in layers.iter().zip(draws).enumerate() {
                    let (out, kl) = layer.forward(tape, h, n, params).map_err(tag_layer(i))?;
                    h = if i < 2 {
                        tape.relu(out).map_err(tag_layer(i))?
                    } else {
                        out
                    };
                    kl_total = Some(match kl_total {
                        Some(acc) => tape.add(acc, kl)?,
                        None => kl,
                    });
                }
                (h, kl_total.expect("three layers"))
            }
        };
        let log_probs = tape.log_softmax(logits).map_err(tag_layer(2))?;
        Ok(HeadForward {
            log_probs,
            kl_total,
        })
    }

    /// Untracked forward: returns `(log_probs, kl_total)`.
    pub fn forward(&self, x: &Tensor, noise: &NoiseBundle, phase: Phase) -> Result<(Tensor, f64)> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone())?;
        let out = self.forward_on_tape(&mut tape, xv, noise, phase, &mut Vec::new())?;
        Ok((
            tape.value(out.log_probs).clone(),
            tape.value(out.kl_total).data()[0],
        ))
    }

    pub fn to_checkpoint_json(&self) -> Value {
        let layers: Vec<Value> = match &self.layers {
            Layers::Dense(d, _) => d
                .iter()
                .map(|l| {
                    json!({
                        "kind": "dense",
                        "in": l.in_dim(),
                        "out": l.out_dim(),
                        "weight": encode(&l.weight),
                        "bias": encode(&l.bias),
                    })
                })
                .collect(),
            Layers::Variational(v) => v
                .iter()
                .map(|l| {
                    json!({
                        "kind": "variational",
                        "in": l.in_dim(),
                        "out": l.out_dim(),
                        "weight_mu": encode(l.weight.mu()),
                        "weight_rho": encode(l.weight.rho()),
                        "bias_mu": encode(l.bias.mu()),
                        "bias_rho": encode(l.bias.rho()),
                    })
                })
                .collect(),
        };
        json!({
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config": self.config,
            "layers": layers,
        })
    }

    pub fn from_checkpoint_json(value: &Value) -> Result<Head> {
        let version = value.get("format_version").and_then(Value::as_u64);
        if version != Some(CHECKPOINT_FORMAT_VERSION) {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {version:?}"
            )));
        }
        let config: HeadConfig = serde_json::from_value(
            value
                .get("config")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("missing config".into()))?,
        )
        .map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
        let mut head = build_head(&config, 0)?;
        let layers = value
            .get("layers")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Checkpoint("missing layers".into()))?;
        if layers.len() != 3 {
            return Err(Error::Checkpoint(format!("expected 3 layers, got {}", layers.len())));
        }
        let keys: &[&str] = match head.layers {
            Layers::Dense(..) => &["weight", "bias"],
            Layers::Variational(_) => &["weight_mu", "weight_rho", "bias_mu", "bias_rho"],
        };
        let expected_kind = if keys.len() == 2 { "dense" } else { "variational" };
        let mut slots = head.parameters_mut().into_iter();
        for (i, layer) in layers.iter().enumerate() {
            if layer.get("kind").and_then(Value::as_str) != Some(expected_kind) {
                return Err(Error::Checkpoint(format!(
                    "layer {} is not a {expected_kind} layer",
                    i + 1
                )));
            }
            for key in keys {
                let slot = slots.next().expect("parameter count matches layout");
                let data = decode(layer.get(*key), i, key)?;
                if data.len() != slot.len() {
                    return Err(Error::Checkpoint(format!(
                        "layer {} {key}: expected {} values, got {}",
                        i + 1,
                        slot.len(),
                        data.len()
                    )));
                }
                slot.data_mut().copy_from_slice(&data);
            }
        }
        Ok(head)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_checkpoint_json())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        crate::io::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Head> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            position: format!("line {}, column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        Head::from_checkpoint_json(&value)
    }
}

/// Shortest round-trip decimal strings.
fn encode(t: &Tensor) -> Vec<String> {
    t.data().iter().map(|v| format!("{v:?}")).collect()
}

fn decode(value: Option<&Value>, layer: usize, key: &str) -> Result<Vec<f64>> {
    let arr = value
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Checkpoint(format!("layer {} missing {key}", layer + 1)))?;
    arr.iter()
        .map(|v| {
            v.as_str()
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|x| x.is_finite())
                .ok_or_else(|| {
                    Error::Checkpoint(format!("layer {} {key}: bad value {v}", layer + 1))
                })
        })
        .collect()
}
