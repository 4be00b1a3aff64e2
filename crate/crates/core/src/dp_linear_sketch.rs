//! Private initialization of linear sketches.
//!
//! A private sketch differs from a plain one only in its starting counters:
//! each starts at `N(0, sigma^2)` (CountSketch) or `E + N(0, sigma^2)`
//! (Count-Min). Updates and queries are the plain ones, so the budget is spent
//! once at construction and never again.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dp_mechanism::{sample_gaussian, NoiseProfile, PrivacyBudget};
use crate::error::{Error, Result};
use crate::linear_sketch::{CounterMatrix, PrivacyRecord, SketchParams, Variant};

/// Initial counters are rounded to multiples of this step.
///
/// Rounding is post-processing of the Gaussian output, so privacy is
/// unchanged, and it keeps every later integer update exact: a counter stays a
/// multiple of 2^-20 and is represented without error while `|c| < 2^33`.
pub const NOISE_GRID: f64 = 1.0 / (1u64 << 20) as f64;

fn snap(x: f64) -> f64 {
    (x / NOISE_GRID).round() * NOISE_GRID
}

impl CounterMatrix {
    /// Private sketch consuming `budget` (rho-zCDP). `noise_seed` drives the
    /// Gaussian draws and must be independent of `master_seed`.
    pub fn new_private(
        params: SketchParams,
        budget: PrivacyBudget,
        master_seed: u64,
        noise_seed: u64,
    ) -> Result<CounterMatrix> {
        let noise = NoiseProfile::new(params.rows(), params.cols(), params.beta(), budget)?;
        let mean = match params.variant() {
            Variant::CountMin => noise.shift,
            Variant::CountSketch => 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let values = (0..params.rows() * params.cols())
            .map(|_| sample_gaussian(&mut rng, mean, noise.sigma).map(snap))
            .collect::<Result<Vec<_>>>()?;
        Ok(CounterMatrix::with_initial_values(
            params,
            master_seed,
            values,
            PrivacyRecord { budget, noise },
        ))
    }

    /// Adds two sketches even if both are private.
    ///
    /// The noise of both sides is kept, and the result reports the composed
    /// budget `rho_a + rho_b`.
    pub fn force_merge(&self, other: &CounterMatrix) -> Result<CounterMatrix> {
        self.check_compatible(other)?;
        let privacy = match (self.privacy(), other.privacy()) {
            (Some(a), Some(b)) => Some(PrivacyRecord {
                budget: a.budget.compose(b.budget),
                noise: NoiseProfile {
                    sigma: a.noise.sigma.hypot(b.noise.sigma),
                    shift: a.noise.shift + b.noise.shift,
                    ..a.noise
                },
            }),
            (a, b) => a.or(b).copied(),
        };
        let mut merged = self.clone();
        merged.add_counters(other);
        merged.set_privacy(privacy);
        Ok(merged)
    }
}

/// Bounds on `estimate - truth` for a single item.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorBound {
    pub lower: f64,
    pub upper: f64,
}

impl ErrorBound {
    /// Count-Min: `[0, gamma N + 2E]`; CountSketch: `[-(gamma N + E), gamma N + E]`.
    pub fn for_variant(variant: Variant, gamma: f64, stream_len: u64, shift: f64) -> Self {
        let hash_error = gamma * stream_len as f64;
        match variant {
            Variant::CountMin => Self {
                lower: 0.0,
                upper: hash_error + 2.0 * shift,
            },
            Variant::CountSketch => Self {
                lower: -(hash_error + shift),
                upper: hash_error + shift,
            },
        }
    }

    pub fn contains(&self, error: f64) -> bool {
        self.lower <= error && error <= self.upper
    }
}

/// Per-item error bound, holding with probability `1 - beta`, for a private
/// sketch with `params` and `budget` after a stream of `stream_len` ops.
pub fn pointwise_error_bound(
    params: &SketchParams,
    budget: PrivacyBudget,
    stream_len: u64,
) -> Result<ErrorBound> {
    if budget.rho() <= 0.0 {
        return Err(Error::param("rho", "the private bound needs rho > 0"));
    }
    let noise = NoiseProfile::new(params.rows(), params.cols(), params.beta(), budget)?;
    Ok(ErrorBound::for_variant(
        params.variant(),
        params.gamma(),
        stream_len,
        noise.shift,
    ))
}
