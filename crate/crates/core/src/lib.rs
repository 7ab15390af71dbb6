//! Almost-exact matching for observational causal inference on categorical data.
//!
//! The engine matches treated and control units exactly on as many covariates as
//! it can. It drops covariates one at a time, choosing each drop by a
//! hold-out match-quality score that trades prediction error against balance.
//! Matched groups carry conditional average treatment effect (CATE) estimates.
//!
//! Modules:
//! - [`dataset`]: encoded categorical data, CSV ingestion, holdout splitting.
//! - [`grouper`]: exact-match grouping (mixed-radix keys or tuple keys) and SQL emission.
//! - [`quality`]: prediction error, balancing factor and match quality.
//! - [`engine`]: the iterative matching driver and treatment-effect estimates.
//! - [`oracle`]: exact symbolic bias enumeration for the oracle variant of the procedure.
//! - [`synth`]: seeded synthetic-data generators with known ground truth.
//!
//! Numeric code is generic over the [`Real`] scalar; the oracle is generic over
//! an exact field. The aliases at the crate root pick the usual instantiations.

pub mod dataset;
pub mod engine;
pub mod error;
pub mod grouper;
pub mod oracle;
pub mod quality;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::{Exact, Real};

/// Exact rational used by the oracle enumerator.
pub type Rational = num_rational::BigRational;

/// A dataset with `f64` outcomes.
pub type Dataset = dataset::Dataset<f64>;
/// A dataset with `f32` outcomes.
pub type Dataset32 = dataset::Dataset<f32>;
/// A matching run over `f64` outcomes.
pub type MatchRun = engine::MatchRun<f64>;
/// A matched group over `f64` outcomes.
pub type MatchedGroup = engine::MatchedGroup<f64>;
/// Per-level quality over `f64`.
pub type LevelQuality = quality::LevelQuality<f64>;
/// Symbolic outcome expression with exact rational coefficients.
pub type Symbolic = oracle::LinearSymbolic<Rational>;
/// Bias matrix with exact rational entries.
pub type BiasMatrix = oracle::BiasMatrix<Rational>;

pub use dataset::{DatasetSchema, Permutation};
pub use engine::{FlameConfig, PeThreshold, StopReason};
pub use grouper::{ActiveSet, Backend, GroupTable};
