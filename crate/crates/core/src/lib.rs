//! Optimal subsampling for large-sample logistic regression.
//!
//! The crate estimates logistic-regression coefficients from a small,
//! informatively drawn subsample of a large dataset. Rows are drawn with
//! replacement according to A-optimal (`mMSE`) or L-optimal (`mVc`)
//! subsampling probabilities built around a pilot estimate, the subsample is
//! fitted by inverse-probability weighted Newton iterations, and standard
//! errors come from the subsample alone.
//!
//! Module map:
//!
//! * [`data`] / [`io`]: the dataset, plan and subsample containers, CSV and
//!   binary formats.
//! * [`glm`]: logistic likelihood, score, Hessian and the Newton solver.
//! * [`ssp`]: subsampling-probability constructors and the asymptotic MSE
//!   criteria they minimize.
//! * [`sampler`]: seeded random streams, alias tables, Poisson sampling.
//! * [`osmac`]: general subsampling, the two-step estimator, the local
//!   case-control baseline and the subsample variance estimator.
//! * [`metrics`]: classification accuracy and rank AUC.
//! * [`synth`]: simulated covariate scenarios.
//! * [`bench`]: repetition studies and machine-readable reports.
//!
//! With the default `parallel` feature, per-row loops and experiment
//! repetitions run on rayon. Reductions are always combined in a fixed
//! chunk order, so results are bit-identical with the feature disabled.

pub mod bench;
pub mod data;
pub mod error;
pub mod glm;
pub mod io;
mod linalg;
pub mod metrics;
pub mod osmac;
pub mod par;
pub mod sampler;
pub mod ssp;
pub mod synth;

pub use data::{Dataset, SamplingPlan, Scheme, Step, Subsample};
pub use error::{OsmacError, Result};
pub use glm::{FitResult, SolverConfig, WeightedSample};
pub use sampler::{AliasTable, Rng};
