//! Count-Min and CountSketch over a `d x w` array of real counters.
//!
//! Both variants share construction, update and merge; they differ only in the
//! sign hash (Count-Min uses `g_r = +1`) and in the row aggregate returned by
//! [`CounterMatrix::query`] (minimum versus median).

use std::fmt;

use crate::dp_mechanism::{check_probability, NoiseProfile, PrivacyBudget};
use crate::error::{Error, Result};
use crate::hashing::{HashSeed, RowHasher};

/// Which linear sketch a [`CounterMatrix`] implements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    CountMin,
    CountSketch,
}

impl Variant {
    pub fn short_name(self) -> &'static str {
        match self {
            Variant::CountMin => "cm",
            Variant::CountSketch => "cs",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Accuracy, failure probability and the resulting sketch shape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SketchParams {
    gamma: f64,
    beta: f64,
    variant: Variant,
    rows: usize,
    cols: usize,
}

/// `ceil(ln(2 / beta))`, bumped to odd for CountSketch so the median is a
/// single row value.
fn rows_for(variant: Variant, beta: f64) -> usize {
    let rows = ((2.0 / beta).ln().ceil() as usize).max(1);
    match variant {
        Variant::CountSketch if rows.is_multiple_of(2) => rows + 1,
        _ => rows,
    }
}

impl SketchParams {
    /// Shape from targets: `d = ceil(ln(2/beta))`, `w = ceil(1/gamma)`.
    pub fn from_accuracy(variant: Variant, gamma: f64, beta: f64) -> Result<Self> {
        check_probability("gamma", gamma)?;
        check_probability("beta", beta)?;
        Ok(Self {
            gamma,
            beta,
            variant,
            rows: rows_for(variant, beta),
            cols: (1.0 / gamma).ceil() as usize,
        })
    }

    /// Shape from a memory budget of `bytes` (8 bytes per counter): rows come
    /// from `beta`, then `w = floor(bytes / (8 d))`. `gamma` is reported as `1/w`.
    pub fn from_space_budget(variant: Variant, bytes: usize, beta: f64) -> Result<Self> {
        check_probability("beta", beta)?;
        let rows = rows_for(variant, beta);
        let cols = bytes / (std::mem::size_of::<f64>() * rows);
        if cols == 0 {
            return Err(Error::param(
                "space",
                format!("{bytes} bytes cannot hold {rows} rows of 8-byte counters"),
            ));
        }
        Ok(Self {
            gamma: 1.0 / cols as f64,
            beta,
            variant,
            rows,
            cols,
        })
    }

    /// Explicit shape. CountSketch requires an odd row count.
    pub fn with_shape(variant: Variant, rows: usize, cols: usize, beta: f64) -> Result<Self> {
        check_probability("beta", beta)?;
        if rows == 0 {
            return Err(Error::param("rows", "must be >= 1"));
        }
        if cols == 0 {
            return Err(Error::param("cols", "must be >= 1"));
        }
        if variant == Variant::CountSketch && rows.is_multiple_of(2) {
            return Err(Error::param(
                "rows",
                "CountSketch needs an odd number of rows",
            ));
        }
        Ok(Self {
            gamma: 1.0 / cols as f64,
            beta,
            variant,
            rows,
            cols,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Bytes occupied by the counters.
    pub fn space_bytes(&self) -> usize {
        self.rows * self.cols * std::mem::size_of::<f64>()
    }
}

/// Insert (`+1`) or delete (`-1`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Delta {
    Insert,
    Delete,
}

impl Delta {
    pub fn value(self) -> i64 {
        match self {
            Delta::Insert => 1,
            Delta::Delete => -1,
        }
    }
}

/// One turnstile event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamOp {
    pub item: u64,
    pub delta: Delta,
}

impl StreamOp {
    pub fn insert(item: u64) -> Self {
        Self {
            item,
            delta: Delta::Insert,
        }
    }

    pub fn delete(item: u64) -> Self {
        Self {
            item,
            delta: Delta::Delete,
        }
    }

    /// Builds an op from a raw `value`, which must be `+1` or `-1`.
    pub fn new(item: u64, value: i64) -> Result<Self> {
        match value {
            1 => Ok(Self::insert(item)),
            -1 => Ok(Self::delete(item)),
            v => Err(Error::param("value", format!("must be +1 or -1, got {v}"))),
        }
    }
}

/// What a private sketch spent and how it was noised.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrivacyRecord {
    pub budget: PrivacyBudget,
    pub noise: NoiseProfile,
}

/// The sketch state: counters, hash functions and privacy record.
#[derive(Clone, Debug)]
pub struct CounterMatrix {
    params: SketchParams,
    master_seed: u64,
    hashers: Vec<RowHasher>,
    values: Vec<f64>,
    privacy: Option<PrivacyRecord>,
}

impl CounterMatrix {
    /// All-zero, non-private sketch.
    pub fn new(params: SketchParams, master_seed: u64) -> Self {
        let hashers = (0..params.rows)
            .map(|row| RowHasher::new(HashSeed::new(master_seed, row)))
            .collect();
        Self {
            params,
            master_seed,
            hashers,
            values: vec![0.0; params.rows * params.cols],
            privacy: None,
        }
    }

    pub(crate) fn with_initial_values(
        params: SketchParams,
        master_seed: u64,
        values: Vec<f64>,
        privacy: PrivacyRecord,
    ) -> Self {
        debug_assert_eq!(values.len(), params.rows * params.cols);
        let mut sketch = Self::new(params, master_seed);
        sketch.values = values;
        sketch.privacy = Some(privacy);
        sketch
    }

    pub fn params(&self) -> &SketchParams {
        &self.params
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn is_private(&self) -> bool {
        self.privacy.is_some()
    }

    pub fn privacy(&self) -> Option<&PrivacyRecord> {
        self.privacy.as_ref()
    }

    /// Total zCDP budget consumed; fixed at construction.
    pub fn rho_consumed(&self) -> PrivacyBudget {
        self.privacy
            .map_or(PrivacyBudget::zero(), |record| record.budget)
    }

    /// Row-major counters.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let w = self.params.cols;
        &self.values[row * w..(row + 1) * w]
    }

    /// Column `h_r(item)` for row `r`.
    pub fn bucket(&self, row: usize, item: u64) -> usize {
        self.hashers[row].index(item, self.params.cols)
    }

    /// `g_r(item)`; always `+1` for Count-Min.
    pub fn sign(&self, row: usize, item: u64) -> i8 {
        match self.params.variant {
            Variant::CountMin => 1,
            Variant::CountSketch => self.hashers[row].sign(item),
        }
    }

    pub fn update(&mut self, op: StreamOp) {
        self.add(op.item, op.delta.value());
    }

    pub fn extend<I: IntoIterator<Item = StreamOp>>(&mut self, ops: I) {
        for op in ops {
            self.update(op);
        }
    }

    /// Adds `weight` copies of `item`: `C[r, h_r(x)] += weight * g_r(x)` per row.
    pub fn add(&mut self, item: u64, weight: i64) {
        let w = self.params.cols;
        let weight = weight as f64;
        for row in 0..self.params.rows {
            let col = self.hashers[row].index(item, w);
            let step = match self.params.variant {
                Variant::CountMin => weight,
                Variant::CountSketch => weight * f64::from(self.hashers[row].sign(item)),
            };
            self.values[row * w + col] += step;
        }
    }

    /// Frequency estimate: row minimum (Count-Min) or median of signed row
    /// values (CountSketch).
    pub fn query(&self, item: u64) -> f64 {
        let w = self.params.cols;
        match self.params.variant {
            Variant::CountMin => (0..self.params.rows)
                .map(|row| self.values[row * w + self.hashers[row].index(item, w)])
                .fold(f64::INFINITY, f64::min),
            Variant::CountSketch => {
                let mut signed: Vec<f64> = (0..self.params.rows)
                    .map(|row| {
                        let hasher = &self.hashers[row];
                        f64::from(hasher.sign(item)) * self.values[row * w + hasher.index(item, w)]
                    })
                    .collect();
                let mid = signed.len() / 2;
                *signed.select_nth_unstable_by(mid, f64::total_cmp).1
            }
        }
    }

    /// Counter-wise sum of two sketches with identical shape and hash seed.
    ///
    /// At most one side may be private; use
    /// [`force_merge`](CounterMatrix::force_merge) to add two noisy sketches.
    pub fn merge(&self, other: &CounterMatrix) -> Result<CounterMatrix> {
        if self.is_private() && other.is_private() {
            return Err(Error::Incompatible(
                "both sketches are private; their noise would add up (use force_merge)".into(),
            ));
        }
        self.check_compatible(other)?;
        let mut merged = self.clone();
        merged.privacy = self.privacy.or(other.privacy);
        merged.add_counters(other);
        Ok(merged)
    }

    pub(crate) fn check_compatible(&self, other: &CounterMatrix) -> Result<()> {
        if self.params != other.params {
            return Err(Error::Incompatible(format!(
                "parameters differ: {:?} vs {:?}",
                self.params, other.params
            )));
        }
        if self.master_seed != other.master_seed {
            return Err(Error::Incompatible(format!(
                "hash seeds differ: {} vs {}",
                self.master_seed, other.master_seed
            )));
        }
        Ok(())
    }

    pub(crate) fn add_counters(&mut self, other: &CounterMatrix) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub(crate) fn set_privacy(&mut self, privacy: Option<PrivacyRecord>) {
        self.privacy = privacy;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::{HashMap, HashSet};

    fn cm(gamma: f64, beta: f64) -> SketchParams {
        SketchParams::from_accuracy(Variant::CountMin, gamma, beta).unwrap()
    }

    fn cs(gamma: f64, beta: f64) -> SketchParams {
        SketchParams::from_accuracy(Variant::CountSketch, gamma, beta).unwrap()
    }

    #[test]
    fn shape_from_accuracy() {
        // ln 4 = 1.386 -> 2 rows; 1/0.5 -> 2 cols.
        let p = cm(0.5, 0.5);
        assert_eq!((p.rows(), p.cols()), (2, 2));
        let s = CounterMatrix::new(p, 1);
        assert!(s.values().iter().all(|&v| v == 0.0));
        assert!(!s.is_private());
        // ln 200 = 5.298 -> 6 rows, forced to 7 for CountSketch.
        assert_eq!((cm(0.01, 0.01).rows(), cm(0.01, 0.01).cols()), (6, 100));
        assert_eq!(cs(0.01, 0.01).rows(), 7);
        assert_eq!(cs(0.5, 0.5).rows(), 3);
    }

    #[test]
    fn invalid_params() {
        for (g, b) in [
            (0.0, 0.1),
            (1.0, 0.1),
            (0.1, 0.0),
            (0.1, 1.0),
            (f64::NAN, 0.1),
        ] {
            assert!(SketchParams::from_accuracy(Variant::CountMin, g, b).is_err());
        }
        assert!(SketchParams::with_shape(Variant::CountMin, 0, 4, 0.1).is_err());
        assert!(SketchParams::with_shape(Variant::CountMin, 4, 0, 0.1).is_err());
        assert!(SketchParams::with_shape(Variant::CountSketch, 4, 4, 0.1).is_err());
        assert!(SketchParams::from_space_budget(Variant::CountMin, 8, 0.01).is_err());
    }

    #[test]
    fn shape_from_space() {
        let p = SketchParams::from_space_budget(Variant::CountMin, 48_000, 0.01).unwrap();
        assert_eq!((p.rows(), p.cols()), (6, 1000));
        let p = SketchParams::from_space_budget(Variant::CountSketch, 48_000, 0.01).unwrap();
        assert_eq!((p.rows(), p.cols()), (7, 857));
        assert!(p.space_bytes() <= 48_000);
    }

    #[test]
    fn stream_op_values() {
        assert_eq!(StreamOp::new(3, 1).unwrap(), StreamOp::insert(3));
        assert_eq!(StreamOp::new(3, -1).unwrap(), StreamOp::delete(3));
        assert!(StreamOp::new(3, 2).is_err());
        assert!(StreamOp::new(3, 0).is_err());
    }

    #[test]
    fn fresh_sketch_queries_zero() {
        for p in [cm(0.1, 0.1), cs(0.1, 0.1)] {
            let s = CounterMatrix::new(p, 9);
            for x in 0..100 {
                assert_eq!(s.query(x), 0.0);
            }
        }
    }

    #[test]
    fn insert_then_delete_restores() {
        for p in [cm(0.05, 0.05), cs(0.05, 0.05)] {
            let mut s = CounterMatrix::new(p, 4);
            s.extend((0..50).map(StreamOp::insert));
            let before = s.values().to_vec();
            s.update(StreamOp::insert(777));
            assert_ne!(s.values(), &before[..]);
            s.update(StreamOp::delete(777));
            assert_eq!(s.values(), &before[..]);
        }
    }

    #[test]
    fn single_insert_touches_one_counter_per_row() {
        let mut s = CounterMatrix::new(cm(0.05, 0.01), 17);
        s.update(StreamOp::insert(12345));
        assert_eq!(
            s.values().iter().filter(|&&v| v == 1.0).count(),
            s.params().rows()
        );
        assert_eq!(
            s.values().iter().filter(|&&v| v == 0.0).count(),
            s.values().len() - s.params().rows()
        );
        for r in 0..s.params().rows() {
            assert_eq!(s.row(r).iter().sum::<f64>(), 1.0);
        }

        let mut s = CounterMatrix::new(cs(0.05, 0.01), 17);
        s.update(StreamOp::insert(12345));
        for r in 0..s.params().rows() {
            let seed = HashSeed::new(17, r);
            let col = crate::hashing::hash_index(seed, 12345, s.params().cols());
            let sign = crate::hashing::hash_sign(seed, 12345);
            assert_eq!(s.row(r)[col], f64::from(sign));
            assert_eq!(s.row(r).iter().map(|v| v.abs()).sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn repeated_item_without_collisions_is_exact() {
        // Items 0..20 in 1000 columns: use the first seed that is collision-free.
        for p in [cm(0.001, 0.01), cs(0.001, 0.01)] {
            let seed = (0u64..)
                .find(|&seed| {
                    let s = CounterMatrix::new(p, seed);
                    (0..p.rows()).all(|r| {
                        (0..20)
                            .map(|x| s.bucket(r, x))
                            .collect::<HashSet<_>>()
                            .len()
                            == 20
                    })
                })
                .unwrap();
            let mut s = CounterMatrix::new(p, seed);
            for x in 0..20 {
                s.extend(std::iter::repeat_n(StreamOp::insert(x), 5));
            }
            for x in 0..20 {
                assert_eq!(s.query(x), 5.0);
            }
        }
    }

    #[test]
    fn merge_rules() {
        let p = cm(0.1, 0.1);
        let mut a = CounterMatrix::new(p, 1);
        a.extend((0..30).map(StreamOp::insert));
        let empty = CounterMatrix::new(p, 1);
        assert_eq!(empty.merge(&a).unwrap().values(), a.values());

        assert!(a.merge(&CounterMatrix::new(p, 2)).is_err());
        assert!(a.merge(&CounterMatrix::new(cm(0.2, 0.1), 1)).is_err());
        assert!(a.merge(&CounterMatrix::new(cs(0.1, 0.1), 1)).is_err());
    }

    #[test]
    fn merge_equals_concatenation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in [cm(0.02, 0.05), cs(0.02, 0.05)] {
            let s1: Vec<StreamOp> = (0..1000)
                .map(|_| StreamOp::insert(rng.random_range(0..300)))
                .collect();
            let s2: Vec<StreamOp> = (0..1000)
                .map(|_| {
                    StreamOp::new(
                        rng.random_range(0..300),
                        if rng.random_bool(0.7) { 1 } else { -1 },
                    )
                    .unwrap()
                })
                .collect();
            let mut a = CounterMatrix::new(p, 8);
            a.extend(s1.iter().copied());
            let mut b = CounterMatrix::new(p, 8);
            b.extend(s2.iter().copied());
            let mut whole = CounterMatrix::new(p, 8);
            whole.extend(s1.iter().chain(&s2).copied());
            assert_eq!(a.merge(&b).unwrap().values(), whole.values());
        }
    }

    fn exact(ops: &[StreamOp]) -> HashMap<u64, i64> {
        let mut f = HashMap::new();
        for op in ops {
            *f.entry(op.item).or_insert(0) += op.delta.value();
        }
        f
    }

    /// Strict-turnstile stream over a small universe: deletes only hit live items.
    fn strict_stream(rng: &mut ChaCha8Rng, len: usize, universe: u64) -> Vec<StreamOp> {
        let mut live: Vec<u64> = Vec::new();
        let mut ops = Vec::with_capacity(len);
        for _ in 0..len {
            if !live.is_empty() && rng.random_bool(0.3) {
                let idx = rng.random_range(0..live.len());
                ops.push(StreamOp::delete(live.swap_remove(idx)));
            } else {
                let x = rng.random_range(0..universe);
                live.push(x);
                ops.push(StreamOp::insert(x));
            }
        }
        ops
    }

    #[test]
    fn count_min_never_underestimates_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..20 {
            let ops = strict_stream(&mut rng, 2000, 64);
            let mut s = CounterMatrix::new(cm(0.2, 0.2), trial);
            s.extend(ops.iter().copied());
            let f = exact(&ops);
            for x in 0..64 {
                assert!(s.query(x) >= *f.get(&x).unwrap_or(&0) as f64);
            }
        }
    }

    #[test]
    fn count_sketch_unbiased_over_seeds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ops: Vec<StreamOp> = (0..2000)
            .map(|_| StreamOp::insert(rng.random_range(0..200)))
            .collect();
        let target = ops[0].item;
        let truth = exact(&ops)[&target] as f64;
        let p = cs(0.1, 0.3);
        let est: Vec<f64> = (0..1000u64)
            .map(|seed| {
                let mut s = CounterMatrix::new(p, seed);
                s.extend(ops.iter().copied());
                s.query(target)
            })
            .collect();
        let mean = est.iter().sum::<f64>() / est.len() as f64;
        let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (est.len() - 1) as f64;
        let se = (var / est.len() as f64).sqrt();
        assert!(
            (mean - truth).abs() <= 3.0 * se,
            "mean {mean} truth {truth} se {se}"
        );
    }

    #[test]
    fn pointwise_error_rate_within_beta() {
        let (gamma, beta) = (0.01, 0.05);
        let n = 10_000;
        for p in [cm(gamma, beta), cs(gamma, beta)] {
            let (mut bad, mut total) = (0usize, 0usize);
            for seed in 0..50u64 {
                let ops = crate::workload::gen_zipf(&crate::workload::StreamSpec::zipf(
                    n,
                    16,
                    1000 + seed,
                ))
                .unwrap();
                let mut s = CounterMatrix::new(p, seed);
                s.extend(ops.iter().copied());
                for (&x, &fx) in &exact(&ops) {
                    total += 1;
                    bad += usize::from((s.query(x) - fx as f64).abs() > gamma * n as f64);
                }
            }
            let rate = bad as f64 / total as f64;
            assert!(rate <= beta, "{:?}: failure rate {rate}", p.variant());
        }
    }

    proptest! {
        #[test]
        fn update_order_irrelevant(items in prop::collection::vec((0u64..50, any::<bool>()), 1..300), seed in any::<u64>()) {
            let ops: Vec<StreamOp> = items.iter().map(|&(x, ins)| if ins { StreamOp::insert(x) } else { StreamOp::delete(x) }).collect();
            for p in [cm(0.1, 0.1), cs(0.1, 0.1)] {
                let mut fwd = CounterMatrix::new(p, seed);
                fwd.extend(ops.iter().copied());
                let mut rev = CounterMatrix::new(p, seed);
                rev.extend(ops.iter().rev().copied());
                prop_assert_eq!(fwd.values(), rev.values());
            }
        }
    }
}
