//! Graph-based semi-supervised learning with `α`-parametrized propagation,
//! large-dimensional corrections and performance prediction.
//!
//! Everything numeric is generic over [`Real`]; the aliases below fix the
//! scalar to `f64`.

// `!(x > 0)` style checks are there to catch NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod dataset;
pub mod error;
pub mod gmm;
pub mod kernel;
pub mod linalg;
pub mod propagation;
pub mod rmt_expansion;
pub mod scalar;
pub mod seeds;
pub mod tuning;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Split = dataset::LabelledSplit<f64>;
pub type Mixture = gmm::MixtureModel<f64>;
pub type Population = gmm::PopulationStats<f64>;
pub type RadialKernel = kernel::Kernel<f64>;
pub type Scores = propagation::ScoreMatrix<f64>;
pub type System = propagation::PropagationSystem<f64>;
pub type ScoreLaw = asymptotics::GaussianScoreLaw<f64>;
pub type Tuning = tuning::TuningResult<f64>;
pub type Expansion = rmt_expansion::ExpansionTerms<f64>;
