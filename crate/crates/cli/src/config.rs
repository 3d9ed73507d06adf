//! Experiment configuration: a JSON document whose sections default
//! independently, overridden in turn by command-line flags.

use std::path::{Path, PathBuf};

use bvi_core::data::{FeatureFormat, SynthSpec};
use bvi_core::dist::PriorSpec;
use bvi_core::layers::Estimator;
use bvi_core::model::{HeadConfig, Variant};
use bvi_core::train::TrainConfig;
use bvi_core::uncertainty::DEFAULT_MC_SAMPLES;
use bvi_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub head: HeadSection,
    pub train: TrainConfig,
    pub inference: InferenceSection,
    pub eval: EvalSection,
}

/// Where datasets come from. Explicit paths win over `dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub synth: SynthSpec,
    pub format: FeatureFormat,
    /// Directory holding `train.<ext>`, `val.<ext>` and `ood.<ext>`.
    pub dir: PathBuf,
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub ood: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            synth: SynthSpec::default(),
            format: FeatureFormat::Bfv,
            dir: PathBuf::from("data"),
            train: None,
            val: None,
            ood: None,
        }
    }
}

impl DataSection {
    fn resolve(&self, explicit: &Option<PathBuf>, stem: &str) -> PathBuf {
        explicit
            .clone()
            .unwrap_or_else(|| self.dir.join(format!("{stem}.{}", self.format.extension())))
    }

    pub fn train_path(&self) -> PathBuf {
        self.resolve(&self.train, "train")
    }

    pub fn val_path(&self) -> PathBuf {
        self.resolve(&self.val, "val")
    }

    pub fn ood_path(&self) -> PathBuf {
        self.resolve(&self.ood, "ood")
    }
}

/// Head settings; input width and class count come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadSection {
    pub variant: Variant,
    pub hidden_dims: [usize; 2],
    pub dropout_rate: f64,
    pub estimator: Estimator,
    pub prior: PriorSpec,
    pub init_seed: u64,
}

impl Default for HeadSection {
    fn default() -> Self {
        let base = HeadConfig::new(1, 2, Variant::StochasticVi);
        HeadSection {
            variant: base.variant,
            hidden_dims: base.hidden_dims,
            dropout_rate: base.dropout_rate,
            estimator: base.estimator,
            prior: base.prior,
            init_seed: 0,
        }
    }
}

impl HeadSection {
    pub fn head_config(&self, input_dim: usize, num_classes: usize, variant: Variant) -> HeadConfig {
        HeadConfig {
            input_dim,
            hidden_dims: self.hidden_dims,
            num_classes,
            variant,
            dropout_rate: self.dropout_rate,
            estimator: self.estimator,
            prior: self.prior,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceSection {
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for InferenceSection {
    fn default() -> Self {
        InferenceSection {
            mc_samples: DEFAULT_MC_SAMPLES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub bins: usize,
    pub out_dir: PathBuf,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            bins: 50,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// The file at `path` if given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.data.synth.validate()?;
        self.train.validate()?;
        self.head.head_config(1, 2, self.head.variant).validate()?;
        if self.inference.mc_samples == 0 {
            return Err(Error::Config("inference.mc_samples must be at least 1".into()));
        }
        if self.eval.bins == 0 {
            return Err(Error::Config("eval.bins must be at least 1".into()));
        }
        Ok(())
    }
}
