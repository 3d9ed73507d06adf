//! Bayesian classification heads over fixed feature vectors.
//!
//! A small reverse-mode autodiff [`tensor`] engine drives three head
//! variants (deterministic, MC dropout and mean-field variational
//! inference), trained on the negated ELBO and queried by Monte Carlo
//! sampling for predictive entropy and BALD.

pub mod data;
pub mod dist;
pub mod error;
pub mod eval;
pub mod io;
pub mod layers;
pub mod model;
pub mod seeding;
pub mod tensor;
pub mod train;
pub mod uncertainty;

pub use data::{FeatureFormat, LabeledFeatureSet, SynthData, SynthSpec, OOD_LABEL};
pub use dist::{DiagonalGaussian, PriorSpec};
pub use error::{Error, Result};
pub use eval::{Curve, DensityHistogram, EvalBundle, EvalOptions, ExampleScores, Summary};
pub use layers::{Estimator, Phase};
pub use model::{build_head, Head, HeadConfig, NoiseBundle, Variant};
pub use tensor::{Tape, Tensor, Var};
pub use train::{train, KlWeightMode, Optimizer, TrainConfig, TrainReport};
pub use uncertainty::{mc_predict, PredictiveDistribution, UncertaintyReport};
