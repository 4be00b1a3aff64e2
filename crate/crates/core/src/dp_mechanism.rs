//! Privacy accounting and Gaussian-noise calibration.
//!
//! Budgets are tracked in zero-concentrated DP (zCDP): a mechanism is
//! `rho`-zCDP, budgets add under composition, and `(epsilon, delta)` is only a
//! reporting view. All logarithms are natural.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// A zCDP budget `rho >= 0`.
///
/// Zero is representable so conversions and ledgers can express "nothing
/// spent"; private constructors require `rho > 0`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct PrivacyBudget(f64);

impl PrivacyBudget {
    pub fn new(rho: f64) -> Result<Self> {
        if !rho.is_finite() || rho < 0.0 {
            return Err(Error::param(
                "rho",
                format!("must be finite and >= 0, got {rho}"),
            ));
        }
        Ok(Self(rho))
    }

    pub const fn zero() -> Self {
        Self(0.0)
    }

    pub fn rho(self) -> f64 {
        self.0
    }

    /// Additive composition of two zCDP mechanisms.
    pub fn compose(self, other: PrivacyBudget) -> PrivacyBudget {
        PrivacyBudget(self.0 + other.0)
    }

    fn require_positive(self) -> Result<f64> {
        if self.0 > 0.0 {
            Ok(self.0)
        } else {
            Err(Error::param("rho", "a private construction needs rho > 0"))
        }
    }
}

/// Noise scale and uniform noise bound for one `rows x cols` counter array.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseProfile {
    pub sigma: f64,
    /// The bound `E`: with probability `1 - beta/2` every one of the
    /// `rows * cols` noises lies in `[-E, E]`. Also the Count-Min offset.
    pub shift: f64,
    pub rows: usize,
    pub cols: usize,
    pub beta: f64,
}

impl NoiseProfile {
    pub fn new(rows: usize, cols: usize, beta: f64, budget: PrivacyBudget) -> Result<Self> {
        Ok(Self {
            sigma: calibrate_sigma(rows, budget)?,
            shift: noise_bound(rows, cols, beta, budget)?,
            rows,
            cols,
            beta,
        })
    }
}

fn check_rows(rows: usize) -> Result<()> {
    if rows == 0 {
        return Err(Error::param("rows", "must be >= 1"));
    }
    Ok(())
}

/// l2 sensitivity of a `rows`-row linear sketch under replace-one neighbours.
///
/// Replacing one item moves at most two counters per row, each by one.
pub fn l2_sensitivity(rows: usize) -> f64 {
    (2.0 * rows as f64).sqrt()
}

/// Gaussian noise scale giving `rho`-zCDP: `sigma^2 = sens^2 / (2 rho) = rows / rho`.
pub fn calibrate_sigma(rows: usize, budget: PrivacyBudget) -> Result<f64> {
    check_rows(rows)?;
    let rho = budget.require_positive()?;
    Ok((rows as f64 / rho).sqrt())
}

/// `E = sigma * sqrt(2 ln(4 rows cols / beta))`.
///
/// Gaussian tail plus a union bound over all `rows * cols` counters at failure
/// probability `beta / 2`.
pub fn noise_bound(rows: usize, cols: usize, beta: f64, budget: PrivacyBudget) -> Result<f64> {
    check_rows(rows)?;
    if cols == 0 {
        return Err(Error::param("cols", "must be >= 1"));
    }
    check_probability("beta", beta)?;
    let sigma = calibrate_sigma(rows, budget)?;
    let cells = rows as f64 * cols as f64;
    Ok(sigma * (2.0 * (4.0 * cells / beta).ln()).sqrt())
}

/// Converts `rho`-zCDP to `(epsilon, delta)`-DP: `epsilon = rho + 2 sqrt(rho ln(1/delta))`.
pub fn zcdp_to_dp(budget: PrivacyBudget, delta: f64) -> Result<f64> {
    check_probability("delta", delta)?;
    let rho = budget.rho();
    Ok(rho + 2.0 * (rho * (1.0 / delta).ln()).sqrt())
}

/// Even share of a budget across `parts` composed mechanisms.
pub fn split_budget(budget: PrivacyBudget, parts: usize) -> Result<PrivacyBudget> {
    if parts == 0 {
        return Err(Error::param("parts", "must be >= 1"));
    }
    Ok(PrivacyBudget(budget.rho() / parts as f64))
}

/// One draw from `N(mean, sigma^2)` using the caller's generator.
///
/// This is the only place noise is produced; swapping in another zCDP noise
/// distribution means changing this function.
pub fn sample_gaussian<R: Rng + ?Sized>(rng: &mut R, mean: f64, sigma: f64) -> Result<f64> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::param(
            "sigma",
            format!("must be finite and >= 0, got {sigma}"),
        ));
    }
    if sigma == 0.0 {
        return Ok(mean);
    }
    let z: f64 = StandardNormal.sample(rng);
    Ok(mean + sigma * z)
}

pub(crate) fn check_probability(name: &'static str, p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("must lie in (0, 1), got {p}")))
    }
}
