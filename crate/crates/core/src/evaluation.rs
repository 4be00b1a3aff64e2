//! Exact oracle and accuracy metrics.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dp_mechanism::PrivacyBudget;
use crate::error::{Error, Result};
use crate::hashing::derive_seed;
use crate::linear_sketch::{CounterMatrix, SketchParams, StreamOp, Variant};

/// Exact net counts of a stream.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExactSummary {
    /// Items with a non-zero net count.
    freq: BTreeMap<u64, i64>,
    total: i64,
    /// Items with a positive net count, ascending.
    sorted_items: Vec<u64>,
    keys: Vec<u64>,
    /// `cumulative[i]` = sum of net counts of `keys[..=i]`.
    cumulative: Vec<i64>,
}

/// Brute-force frequencies, total and rank table of `stream`.
pub fn exact_counts<'a, I: IntoIterator<Item = &'a StreamOp>>(stream: I) -> ExactSummary {
    let mut freq: BTreeMap<u64, i64> = BTreeMap::new();
    for op in stream {
        *freq.entry(op.item).or_insert(0) += op.delta.value();
    }
    freq.retain(|_, c| *c != 0);
    let keys: Vec<u64> = freq.keys().copied().collect();
    let cumulative: Vec<i64> = freq
        .values()
        .scan(0i64, |acc, &c| {
            *acc += c;
            Some(*acc)
        })
        .collect();
    ExactSummary {
        total: cumulative.last().copied().unwrap_or(0),
        sorted_items: freq
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(&x, _)| x)
            .collect(),
        freq,
        keys,
        cumulative,
    }
}

impl ExactSummary {
    pub fn frequency(&self, item: u64) -> i64 {
        self.freq.get(&item).copied().unwrap_or(0)
    }

    /// Net stream size `N`.
    pub fn total(&self) -> i64 {
        self.total
    }

    /// Items with positive net count (the set `Psi`), ascending.
    pub fn items(&self) -> &[u64] {
        &self.sorted_items
    }

    /// `R(x)`: sum of net counts over items `<= x`.
    pub fn rank(&self, x: u64) -> i64 {
        let idx = self.keys.partition_point(|&k| k <= x);
        if idx == 0 {
            0
        } else {
            self.cumulative[idx - 1]
        }
    }

    /// Smallest item whose exact rank reaches `phi * N`.
    pub fn quantile(&self, phi: f64) -> Result<u64> {
        if self.total <= 0 {
            return Err(Error::NotEnoughItems("quantile of an empty stream".into()));
        }
        let target = phi * self.total as f64;
        self.keys
            .iter()
            .zip(&self.cumulative)
            .find(|(_, &cum)| cum as f64 >= target)
            .map(|(&x, _)| x)
            .ok_or_else(|| Error::NotEnoughItems(format!("no item reaches rank {target}")))
    }

    /// The `k` most frequent items, ties broken by smaller id.
    pub fn top_k(&self, k: usize) -> Result<Vec<u64>> {
        top_k_by(&self.sorted_items, k, |x| self.frequency(x) as f64)
    }
}

/// `R(x)` from a summary.
pub fn exact_rank(summary: &ExactSummary, x: u64) -> i64 {
    summary.rank(x)
}

fn top_k_by(candidates: &[u64], k: usize, score: impl Fn(u64) -> f64) -> Result<Vec<u64>> {
    if k == 0 {
        return Err(Error::param("k", "must be >= 1"));
    }
    if candidates.len() < k {
        return Err(Error::NotEnoughItems(format!(
            "top-{k} requested but only {} distinct items have positive count",
            candidates.len()
        )));
    }
    let mut scored: Vec<(f64, u64)> = candidates.iter().map(|&x| (score(x), x)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(k).map(|(_, x)| x).collect())
}

/// Average relative error `mean over Psi of |f(e) - f_hat(e)| / f(e)`.
pub fn are(estimate: impl Fn(u64) -> f64, summary: &ExactSummary) -> Result<f64> {
    let items = summary.items();
    if items.is_empty() {
        return Err(Error::NotEnoughItems("ARE over an empty item set".into()));
    }
    let sum: f64 = items
        .iter()
        .map(|&x| {
            let truth = summary.frequency(x) as f64;
            (truth - estimate(x)).abs() / truth
        })
        .sum();
    Ok(sum / items.len() as f64)
}

/// F1 between the exact top-`k` and the `k` items of `Psi` with the largest
/// estimates.
pub fn f1_topk(estimate: impl Fn(u64) -> f64, summary: &ExactSummary, k: usize) -> Result<f64> {
    let truth: HashSet<u64> = summary.top_k(k)?.into_iter().collect();
    let predicted = top_k_by(summary.items(), k, estimate)?;
    Ok(f1_score(&predicted, &truth))
}

fn f1_score(predicted: &[u64], truth: &HashSet<u64>) -> f64 {
    let hits = predicted.iter().filter(|x| truth.contains(x)).count() as f64;
    if hits == 0.0 {
        return 0.0;
    }
    let precision = hits / predicted.len() as f64;
    let recall = hits / truth.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Mean `|R_hat(x_i) - R(x_i)|` over the exact `i/(m+1)` quantile items, `i = 1..=m`.
pub fn avg_rank_error(
    rank_estimate: impl Fn(u64) -> f64,
    summary: &ExactSummary,
    m: usize,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::param("m", "must be >= 1"));
    }
    let mut sum = 0.0;
    for i in 1..=m {
        let x = summary.quantile(i as f64 / (m + 1) as f64)?;
        sum += (rank_estimate(x) - summary.rank(x) as f64).abs();
    }
    Ok(sum / m as f64)
}

/// Setup for the lower-bound construction on private CountSketch.
#[derive(Clone, Debug)]
pub struct AdversarialConfig {
    pub params: SketchParams,
    /// `None` runs the construction on a non-private sketch.
    pub budget: Option<PrivacyBudget>,
    pub universe_bits: u32,
    /// Successful trials wanted.
    pub trials: usize,
    pub seed: u64,
    /// Ids scanned per trial while looking for the colliding items.
    pub max_scan: u64,
}

#[derive(Clone, Debug)]
pub struct AdversarialReport {
    /// `|f_hat(x) - f_tilde(x)|` per successful trial.
    pub deviations: Vec<f64>,
    /// Trials abandoned because the scan found no suitable items.
    pub skipped: usize,
    pub sigma: f64,
}

impl AdversarialReport {
    pub fn median(&self) -> f64 {
        let mut d = self.deviations.clone();
        if d.is_empty() {
            return f64::NAN;
        }
        d.sort_by(f64::total_cmp);
        let mid = d.len() / 2;
        if d.len() % 2 == 1 {
            d[mid]
        } else {
            0.5 * (d[mid - 1] + d[mid])
        }
    }
}

/// Finds, for each of the first `k - 1` rows `i`, an item colliding with `x`
/// in row `i` only, with sign equal to `g_i(x)` for the first half of those
/// rows and opposite for the second half.
fn find_colliders(
    sketch: &CounterMatrix,
    x: u64,
    start: u64,
    universe: u64,
    max_scan: u64,
) -> Option<Vec<u64>> {
    let rows = sketch.params().rows();
    let wanted = rows - 1;
    let mut found: Vec<Option<u64>> = vec![None; wanted];
    let mut missing = wanted;
    let x_buckets: Vec<usize> = (0..rows).map(|r| sketch.bucket(r, x)).collect();
    for step in 0..max_scan.min(universe) {
        if missing == 0 {
            break;
        }
        let y = (start + step) % universe;
        if y == x {
            continue;
        }
        let mut hit = None;
        let mut hits = 0;
        for (r, &b) in x_buckets.iter().enumerate() {
            if sketch.bucket(r, y) == b {
                hits += 1;
                hit = Some(r);
            }
        }
        let Some(row) = hit.filter(|&r| hits == 1 && r < wanted) else {
            continue;
        };
        if found[row].is_some() {
            continue;
        }
        let same_sign = row < wanted / 2;
        if (sketch.sign(row, y) == sketch.sign(row, x)) == same_sign {
            found[row] = Some(y);
            missing -= 1;
        }
    }
    found.into_iter().collect()
}

/// Builds, per trial, a database where the noiseless estimate of `x` is
/// pinned to one clean row, and records how far the private estimate moves.
///
/// The database holds `x` with count `n_x` and each collider with count
/// `n_y >> E`: half of the rows read `n_x + n_y`, half read `n_x - n_y`, so
/// the median is the clean row and its noise passes straight through.
pub fn adversarial_lowerbound_check(config: &AdversarialConfig) -> Result<AdversarialReport> {
    let params = config.params;
    if params.variant() != Variant::CountSketch {
        return Err(Error::param(
            "variant",
            "the construction targets CountSketch",
        ));
    }
    if config.universe_bits == 0 || config.universe_bits > 63 {
        return Err(Error::param("universe_bits", "must lie in 1..=63"));
    }
    let universe = 1u64 << config.universe_bits;
    let (sigma, shift) = match config.budget {
        Some(b) => {
            let noise = crate::dp_mechanism::NoiseProfile::new(
                params.rows(),
                params.cols(),
                params.beta(),
                b,
            )?;
            (noise.sigma, noise.shift)
        }
        None => (0.0, 0.0),
    };
    let n_x: i64 = 1000;
    let n_y: i64 = n_x + (100.0 * shift).ceil().max(1000.0) as i64;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut deviations = Vec::with_capacity(config.trials);
    let mut skipped = 0;
    let max_attempts = config.trials.saturating_mul(10).max(10);
    for attempt in 0..max_attempts as u64 {
        if deviations.len() == config.trials {
            break;
        }
        let hash_seed = derive_seed(config.seed, 2 * attempt);
        let noise_seed = derive_seed(config.seed, 2 * attempt + 1);
        let x = rng.random_range(0..universe);
        let start = rng.random_range(0..universe);
        let mut plain = CounterMatrix::new(params, hash_seed);
        let Some(colliders) = find_colliders(&plain, x, start, universe, config.max_scan) else {
            skipped += 1;
            continue;
        };
        let mut noisy = match config.budget {
            Some(b) => CounterMatrix::new_private(params, b, hash_seed, noise_seed)?,
            None => plain.clone(),
        };
        for sketch in [&mut plain, &mut noisy] {
            sketch.add(x, n_x);
            for &y in &colliders {
                sketch.add(y, n_y);
            }
        }
        deviations.push((noisy.query(x) - plain.query(x)).abs());
    }
    Ok(AdversarialReport {
        deviations,
        skipped,
        sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn summary_of(freqs: &[(u64, i64)]) -> ExactSummary {
        let ops: Vec<StreamOp> = freqs
            .iter()
            .flat_map(|&(x, c)| std::iter::repeat_n(StreamOp::insert(x), c as usize))
            .collect();
        exact_counts(&ops)
    }

    #[test]
    fn exact_count_examples() {
        let s = exact_counts(&[
            StreamOp::insert(3),
            StreamOp::insert(3),
            StreamOp::delete(3),
        ]);
        assert_eq!((s.frequency(3), s.total()), (1, 1));
        let e = exact_counts(&[]);
        assert_eq!((e.total(), e.items().len()), (0, 0));
    }

    #[test]
    fn exact_counts_match_second_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut live = Vec::new();
        let mut ops = Vec::new();
        for _ in 0..10_000 {
            if !live.is_empty() && rng.random_bool(0.3) {
                ops.push(StreamOp::delete(
                    live.swap_remove(rng.random_range(0..live.len())),
                ));
            } else {
                let x = rng.random_range(0..500u64);
                live.push(x);
                ops.push(StreamOp::insert(x));
            }
        }
        let s = exact_counts(&ops);
        let mut recount: HashMap<u64, i64> = HashMap::new();
        for x in &live {
            *recount.entry(*x).or_default() += 1;
        }
        assert_eq!(s.total(), live.len() as i64);
        for x in 0..500 {
            assert_eq!(s.frequency(x), recount.get(&x).copied().unwrap_or(0));
        }
        let ascending = s.items().windows(2).all(|w| w[0] < w[1]);
        assert!(ascending);

        for _ in 0..100 {
            let x = rng.random_range(0..520u64);
            let scan: i64 = ops
                .iter()
                .filter(|op| op.item <= x)
                .map(|op| op.delta.value())
                .sum();
            assert_eq!(exact_rank(&s, x), scan);
            if x > 0 {
                assert_eq!(s.rank(x) - s.rank(x - 1), s.frequency(x));
            }
        }
        assert_eq!(s.rank(*s.items().last().unwrap()), s.total());
    }

    #[test]
    fn are_examples() {
        let s = summary_of(&[(1, 10), (2, 5)]);
        let est: HashMap<u64, f64> = [(1, 11.0), (2, 5.0)].into();
        assert!((are(|x| est[&x], &s).unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(are(|x| s.frequency(x) as f64, &s).unwrap(), 0.0);
        assert_eq!(are(|x| 2.0 * s.frequency(x) as f64, &s).unwrap(), 1.0);
        assert!(are(|_| 0.0, &ExactSummary::default()).is_err());
    }

    #[test]
    fn f1_examples() {
        let s = summary_of(&[(1, 10), (2, 8), (3, 6), (4, 1)]);
        assert_eq!(f1_topk(|x| s.frequency(x) as f64, &s, 2).unwrap(), 1.0);
        // Predict {1, 3} against truth {1, 2}.
        let est = |x: u64| match x {
            1 => 10.0,
            3 => 9.0,
            _ => 0.0,
        };
        assert_eq!(f1_topk(est, &s, 2).unwrap(), 0.5);
        let inverted = |x: u64| -(s.frequency(x) as f64);
        assert_eq!(f1_topk(inverted, &s, 2).unwrap(), 0.0);
        assert!(f1_topk(est, &s, 5).is_err());
        assert!(f1_topk(est, &s, 0).is_err());
    }

    #[test]
    fn top_k_ties_prefer_smaller_ids() {
        let s = summary_of(&[(9, 3), (4, 3), (7, 3), (1, 1)]);
        assert_eq!(s.top_k(2).unwrap(), vec![4, 7]);
    }

    #[test]
    fn rank_error_examples() {
        // 100 copies of items 0..100: the median item is 49 with rank 50.
        let s = summary_of(&(0..100).map(|x| (x, 1)).collect::<Vec<_>>());
        assert_eq!(s.quantile(0.5).unwrap(), 49);
        assert_eq!(s.rank(49), 50);
        let err = avg_rank_error(
            |x| s.rank(x) as f64 + if x == 49 { 3.0 } else { 0.0 },
            &s,
            1,
        )
        .unwrap();
        assert_eq!(err, 3.0);
        assert_eq!(avg_rank_error(|x| s.rank(x) as f64, &s, 7).unwrap(), 0.0);
        assert!(avg_rank_error(|_| 0.0, &s, 0).is_err());

        // m = 2 looks at the 1/3 and 2/3 quantile items.
        let seen = std::cell::RefCell::new(Vec::new());
        avg_rank_error(
            |x| {
                seen.borrow_mut().push(x);
                0.0
            },
            &s,
            2,
        )
        .unwrap();
        assert_eq!(
            *seen.borrow(),
            vec![
                s.quantile(1.0 / 3.0).unwrap(),
                s.quantile(2.0 / 3.0).unwrap()
            ]
        );
        assert_eq!(*seen.borrow(), vec![33, 66]);
    }

    #[test]
    fn metrics_are_pure() {
        let s = summary_of(&[(1, 10), (2, 5), (3, 2)]);
        let est = |x: u64| x as f64 * 1.7;
        assert_eq!(
            are(est, &s).unwrap().to_bits(),
            are(est, &s).unwrap().to_bits()
        );
        assert_eq!(
            avg_rank_error(est, &s, 3).unwrap().to_bits(),
            avg_rank_error(est, &s, 3).unwrap().to_bits()
        );
    }

    fn adversarial(budget: Option<f64>, trials: usize) -> AdversarialReport {
        adversarial_lowerbound_check(&AdversarialConfig {
            params: SketchParams::with_shape(Variant::CountSketch, 5, 32, 0.01).unwrap(),
            budget: budget.map(|r| PrivacyBudget::new(r).unwrap()),
            universe_bits: 16,
            trials,
            seed: 17,
            max_scan: 1 << 16,
        })
        .unwrap()
    }

    #[test]
    fn adversarial_non_private_is_exact() {
        let r = adversarial(None, 20);
        assert_eq!(r.deviations.len(), 20);
        assert!(r.deviations.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn adversarial_deviation_scales_with_sigma() {
        let r = adversarial(Some(1.0), 50);
        assert_eq!(r.deviations.len(), 50);
        let m = r.median();
        assert!(
            m >= 0.3 * r.sigma && m <= 3.0 * r.sigma,
            "median {m}, sigma {}",
            r.sigma
        );
        let doubled = adversarial(Some(0.25), 50);
        assert!((doubled.sigma - 2.0 * r.sigma).abs() < 1e-12);
        assert!((doubled.median() / m - 2.0).abs() < 1e-3);
    }

    #[test]
    fn adversarial_rejects_count_min() {
        let cfg = AdversarialConfig {
            params: SketchParams::with_shape(Variant::CountMin, 5, 32, 0.01).unwrap(),
            budget: None,
            universe_bits: 16,
            trials: 1,
            seed: 1,
            max_scan: 10,
        };
        assert!(adversarial_lowerbound_check(&cfg).is_err());
    }

    #[test]
    fn adversarial_short_scan_skips() {
        let r = adversarial_lowerbound_check(&AdversarialConfig {
            params: SketchParams::with_shape(Variant::CountSketch, 5, 32, 0.01).unwrap(),
            budget: None,
            universe_bits: 16,
            trials: 3,
            seed: 2,
            max_scan: 4,
        })
        .unwrap();
        assert!(r.deviations.is_empty());
        assert_eq!(r.skipped, 30);
    }
}
