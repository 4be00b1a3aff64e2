//! Differentially private linear sketches for turnstile streams.
//!
//! - [`CounterMatrix`]: Count-Min and CountSketch, plain or privately
//!   initialized with calibrated Gaussian noise ([`CounterMatrix::new_private`]).
//! - [`DyadicSketch`]: rank and quantile estimation from one linear sketch per
//!   dyadic level, with an optional private CountSketch at every level.
//! - [`dp_mechanism`]: sensitivity, noise calibration and zCDP accounting.
//! - [`workload`] and [`evaluation`]: stream generation, exact oracles and the
//!   accuracy metrics used by the experiment runner.
//!
//! Privacy is spent once, when a private sketch is built. Updates, queries and
//! merges with non-private sketches never touch the budget.

pub mod dp_linear_sketch;
pub mod dp_mechanism;
pub mod dyadic;
pub mod error;
pub mod evaluation;
pub mod hashing;
pub mod linear_sketch;
pub mod workload;

pub use dp_linear_sketch::{pointwise_error_bound, ErrorBound};
pub use dp_mechanism::{NoiseProfile, PrivacyBudget};
pub use dyadic::{DyadicParams, DyadicSketch};
pub use error::{Error, Result};
pub use evaluation::{exact_counts, ExactSummary};
pub use linear_sketch::{CounterMatrix, Delta, SketchParams, StreamOp, Variant};
pub use workload::StreamSpec;
