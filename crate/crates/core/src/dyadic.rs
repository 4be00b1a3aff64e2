//! Dyadic quantile sketches (DCM / DCS) over the universe `[0, 2^B)`.
//!
//! Level `j` (for `j = 0..B`) holds a linear sketch keyed by node
//! `floor(x / 2^j)`, i.e. it counts the dyadic intervals `[k 2^j, (k+1) 2^j)`.
//! A prefix `[0, x)` splits into at most one interval per level, so a rank
//! estimate sums at most `B` point queries.
//!
//! The private variant replaces every level by a private CountSketch with
//! budget `rho / B`; by additive composition the whole structure is `rho`-zCDP.

use std::collections::HashMap;

use crate::dp_mechanism::{noise_bound, split_budget, PrivacyBudget};
use crate::error::{Error, Result};
use crate::hashing::derive_seed;
use crate::linear_sketch::{CounterMatrix, SketchParams, StreamOp, Variant};

const MAX_UNIVERSE_BITS: u32 = 63;

/// Shape and privacy configuration shared by all levels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DyadicParams {
    universe_bits: u32,
    variant: Variant,
    gamma: f64,
    rows: usize,
    cols: usize,
    budget: Option<PrivacyBudget>,
    level_beta: f64,
}

fn check_universe_bits(bits: u32) -> Result<()> {
    if bits == 0 || bits > MAX_UNIVERSE_BITS {
        return Err(Error::param(
            "universe_bits",
            format!("must lie in 1..={MAX_UNIVERSE_BITS}, got {bits}"),
        ));
    }
    Ok(())
}

impl DyadicParams {
    /// Default per-level shape: `d = max(3, odd ceil(ln(L/gamma)))` rows and
    /// `w = ceil(sqrt(L d) / gamma)` columns, with `L = universe_bits`.
    pub fn new(universe_bits: u32, variant: Variant, gamma: f64) -> Result<Self> {
        check_universe_bits(universe_bits)?;
        crate::dp_mechanism::check_probability("gamma", gamma)?;
        let levels = f64::from(universe_bits);
        let mut rows = ((levels / gamma).ln().ceil() as usize).max(3);
        if rows.is_multiple_of(2) {
            rows += 1;
        }
        let cols = ((levels * rows as f64).sqrt() / gamma).ceil() as usize;
        Ok(Self {
            universe_bits,
            variant,
            gamma,
            rows,
            cols,
            budget: None,
            level_beta: gamma / levels,
        })
    }

    pub fn with_shape(mut self, rows: usize, cols: usize) -> Result<Self> {
        SketchParams::with_shape(self.variant, rows, cols, self.level_beta)?;
        self.rows = rows;
        self.cols = cols;
        Ok(self)
    }

    /// Makes every level a private CountSketch with budget `rho / L`.
    pub fn with_privacy(mut self, budget: PrivacyBudget) -> Result<Self> {
        if self.variant == Variant::CountMin {
            return Err(Error::param(
                "variant",
                "private dyadic sketches are only defined over CountSketch",
            ));
        }
        if budget.rho() <= 0.0 {
            return Err(Error::param("rho", "a private construction needs rho > 0"));
        }
        self.budget = Some(budget);
        Ok(self)
    }

    /// Failure probability used for each level's uniform noise bound.
    pub fn with_level_beta(mut self, beta: f64) -> Result<Self> {
        crate::dp_mechanism::check_probability("level_beta", beta)?;
        self.level_beta = beta;
        Ok(self)
    }

    pub fn universe_bits(&self) -> u32 {
        self.universe_bits
    }

    pub fn universe(&self) -> u64 {
        1u64 << self.universe_bits
    }

    pub fn levels(&self) -> usize {
        self.universe_bits as usize
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn level_beta(&self) -> f64 {
        self.level_beta
    }

    pub fn budget(&self) -> Option<PrivacyBudget> {
        self.budget
    }

    pub fn is_private(&self) -> bool {
        self.budget.is_some()
    }

    /// `rho0 = rho / L`.
    pub fn level_budget(&self) -> Option<PrivacyBudget> {
        self.budget
            .map(|b| split_budget(b, self.levels()).expect("levels >= 1"))
    }

    /// `sigma_q = sqrt(d L / rho)`.
    pub fn level_sigma(&self) -> Option<f64> {
        self.level_budget()
            .map(|b| (self.rows as f64 / b.rho()).sqrt())
    }

    pub fn level_params(&self) -> SketchParams {
        SketchParams::with_shape(self.variant, self.rows, self.cols, self.level_beta)
            .expect("shape validated on construction")
    }

    pub fn space_bytes(&self) -> usize {
        self.levels() * self.level_params().space_bytes()
    }
}

#[derive(Clone, Debug)]
enum Level {
    Sketch(CounterMatrix),
    Exact(HashMap<u64, i64>),
}

impl Level {
    fn add(&mut self, node: u64, op: StreamOp) {
        match self {
            Level::Sketch(sketch) => sketch.update(StreamOp { item: node, ..op }),
            Level::Exact(counts) => *counts.entry(node).or_insert(0) += op.delta.value(),
        }
    }

    fn query(&self, node: u64) -> f64 {
        match self {
            Level::Sketch(sketch) => sketch.query(node),
            Level::Exact(counts) => counts.get(&node).copied().unwrap_or(0) as f64,
        }
    }
}

/// A stack of per-level linear sketches answering rank and quantile queries.
#[derive(Clone, Debug)]
pub struct DyadicSketch {
    universe_bits: u32,
    params: Option<DyadicParams>,
    levels: Vec<Level>,
}

impl DyadicSketch {
    /// Sketched levels. Level `j` hashes with a seed derived from
    /// `(master_seed, j)` and, if private, draws noise from `(noise_seed, j)`.
    pub fn new(params: DyadicParams, master_seed: u64, noise_seed: u64) -> Result<Self> {
        let level_params = params.level_params();
        let levels = (0..params.levels())
            .map(|j| {
                let hash_seed = derive_seed(master_seed, j as u64);
                let sketch = match params.level_budget() {
                    Some(rho0) => CounterMatrix::new_private(
                        level_params,
                        rho0,
                        hash_seed,
                        derive_seed(noise_seed, j as u64),
                    )?,
                    None => CounterMatrix::new(level_params, hash_seed),
                };
                Ok(Level::Sketch(sketch))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            universe_bits: params.universe_bits,
            params: Some(params),
            levels,
        })
    }

    /// Oracle mode: every level keeps exact node counts.
    pub fn new_exact(universe_bits: u32) -> Result<Self> {
        check_universe_bits(universe_bits)?;
        Ok(Self {
            universe_bits,
            params: None,
            levels: vec![Level::Exact(HashMap::new()); universe_bits as usize],
        })
    }

    pub fn params(&self) -> Option<&DyadicParams> {
        self.params.as_ref()
    }

    pub fn universe(&self) -> u64 {
        1u64 << self.universe_bits
    }

    pub fn levels(&self) -> usize {
        self.levels.len()
    }

    pub fn is_exact(&self) -> bool {
        self.params.is_none()
    }

    /// Budget spent at construction; queries never add to it.
    pub fn rho_consumed(&self) -> PrivacyBudget {
        self.params
            .and_then(|p| p.budget)
            .unwrap_or(PrivacyBudget::zero())
    }

    /// Budget actually carried by the level sketches, summed.
    pub fn level_rho_total(&self) -> PrivacyBudget {
        self.levels
            .iter()
            .filter_map(|level| match level {
                Level::Sketch(s) => Some(s.rho_consumed()),
                Level::Exact(_) => None,
            })
            .fold(PrivacyBudget::zero(), PrivacyBudget::compose)
    }

    fn check_item(&self, item: u64) -> Result<()> {
        if item >= self.universe() {
            return Err(Error::OutOfUniverse {
                item,
                universe: self.universe(),
            });
        }
        Ok(())
    }

    /// Updates node `floor(item / 2^j)` at every level `j`.
    pub fn update(&mut self, op: StreamOp) -> Result<()> {
        self.check_item(op.item)?;
        let mut node = op.item;
        for level in &mut self.levels {
            level.add(node, op);
            node >>= 1;
        }
        Ok(())
    }

    pub fn extend<'a, I: IntoIterator<Item = &'a StreamOp>>(&mut self, ops: I) -> Result<()> {
        ops.into_iter().try_for_each(|&op| self.update(op))
    }

    /// Estimated count of node `node` at `level`.
    pub fn level_query(&self, level: usize, node: u64) -> f64 {
        self.levels[level].query(node)
    }

    /// Estimated number of stream items with id `< x`, for `0 <= x <= U`.
    pub fn prefix_count(&self, x: u64) -> Result<f64> {
        if x > self.universe() {
            return Err(Error::OutOfUniverse {
                item: x,
                universe: self.universe(),
            });
        }
        Ok(prefix_decomposition(x, self.universe_bits)
            .into_iter()
            .map(|(level, node)| self.levels[level].query(node))
            .sum())
    }

    /// Estimated `R(x) = #{items <= x}`.
    pub fn rank(&self, x: u64) -> Result<f64> {
        self.check_item(x)?;
        self.prefix_count(x + 1)
    }

    /// Smallest id whose estimated rank reaches `phi * total`, by binary search
    /// over `[0, U)`. With noisy ranks this is the crossing the search lands on.
    pub fn quantile(&self, phi: f64, total: u64) -> Result<u64> {
        crate::dp_mechanism::check_probability("phi", phi)?;
        if total == 0 {
            return Err(Error::NotEnoughItems("quantile of an empty stream".into()));
        }
        let target = phi * total as f64;
        let (mut lo, mut hi) = (0u64, self.universe() - 1);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if self.rank(mid)? >= target {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        Ok(lo)
    }
}

/// The dyadic intervals covering `[0, x)`, as `(level, node)` pairs.
///
/// For `x < 2^bits` this is one interval per set bit of `x`: at level `j` the
/// left sibling `(x >> j) - 1` whenever `x >> j` is odd. The full universe
/// `x = 2^bits` has no node of its own and is covered by the two top-level halves.
pub fn prefix_decomposition(x: u64, universe_bits: u32) -> Vec<(usize, u64)> {
    let top = universe_bits as usize - 1;
    if x == 1u64 << universe_bits {
        return vec![(top, 0), (top, 1)];
    }
    let mut out = Vec::new();
    let mut node = x;
    for level in 0..=top {
        if node & 1 == 1 {
            out.push((level, node - 1));
        }
        node >>= 1;
    }
    out
}

/// Rank error bound `sqrt(L ln(L/gamma)) * (N/w + E_level)`.
///
/// `E_level` is the per-level uniform noise bound at `rho / L` and the
/// configured level failure probability; zero when non-private.
pub fn quantile_error_bound(params: &DyadicParams, stream_len: u64) -> Result<f64> {
    let levels = params.levels() as f64;
    let shift = match params.level_budget() {
        Some(rho0) => noise_bound(params.rows, params.cols, params.level_beta, rho0)?,
        None => 0.0,
    };
    let spread = (levels * (levels / params.gamma).ln()).sqrt();
    Ok(spread * (stream_len as f64 / params.cols as f64 + shift))
}
