//! Stream sources: seeded Zipf generation, text-file ingestion and a
//! strict-turnstile deletion pass.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use crate::error::{Error, Result};
use crate::hashing::derive_seed;
use crate::linear_sketch::StreamOp;

/// Default Zipf exponent.
pub const DEFAULT_ZIPF_S: f64 = 1.1;

#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Zipf,
    File(PathBuf),
}

/// Everything needed to reproduce a stream.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamSpec {
    pub source: Source,
    /// Number of inserts drawn (Zipf) before deletions are interleaved.
    pub n: usize,
    pub universe_bits: u32,
    pub zipf_s: f64,
    /// Fraction of the final stream that is deletions, in `[0, 0.5)`.
    pub p_del: f64,
    pub seed: u64,
}

impl StreamSpec {
    pub fn zipf(n: usize, universe_bits: u32, seed: u64) -> Self {
        Self {
            source: Source::Zipf,
            n,
            universe_bits,
            zipf_s: DEFAULT_ZIPF_S,
            p_del: 0.0,
            seed,
        }
    }

    pub fn universe(&self) -> u64 {
        1u64 << self.universe_bits
    }

    /// Produces the stream: generated or loaded, then passed through
    /// [`with_deletions`].
    pub fn build(&self) -> Result<Vec<StreamOp>> {
        let base = match &self.source {
            Source::Zipf => gen_zipf(self)?,
            Source::File(path) => load_stream(path, self.universe_bits)?,
        };
        with_deletions(&base, self.p_del, derive_seed(self.seed, 1))
    }

    fn validate(&self) -> Result<()> {
        if self.universe_bits == 0 || self.universe_bits > 63 {
            return Err(Error::param("universe_bits", "must lie in 1..=63"));
        }
        if !self.zipf_s.is_finite() || self.zipf_s <= 0.0 {
            return Err(Error::param(
                "zipf_s",
                format!("must be > 0, got {}", self.zipf_s),
            ));
        }
        if self.n == 0 {
            return Err(Error::param("n", "must be >= 1"));
        }
        Ok(())
    }
}

/// Keyed bijection on `[0, 2^bits)` used to scatter Zipf ranks over the
/// universe, so that heavy items are not all packed at the low ids.
fn scatter(rank0: u64, bits: u32, key: u64) -> u64 {
    let mask = if bits == 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    };
    let mul_a = (key | 1) & mask | 1;
    let mul_b = (key.rotate_left(29) | 1) & mask | 1;
    let shift = bits.div_ceil(2);
    let mut x = rank0 & mask;
    x = x.wrapping_mul(mul_a) & mask;
    x ^= x >> shift;
    x = x.wrapping_add(key >> 7) & mask;
    x = x.wrapping_mul(mul_b) & mask;
    x ^= x >> shift;
    x
}

/// `n` inserts whose ranks follow a Zipf law with exponent `zipf_s` over
/// ranks `1..=U`; rank `r` maps to a fixed pseudo-random id in `[0, U)`.
pub fn gen_zipf(spec: &StreamSpec) -> Result<Vec<StreamOp>> {
    spec.validate()?;
    let universe = spec.universe();
    let zipf = Zipf::new(universe as f64, spec.zipf_s)
        .map_err(|e| Error::param("zipf_s", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0));
    let key = derive_seed(spec.seed, 2);
    Ok((0..spec.n)
        .map(|_| {
            let rank = zipf.sample(&mut rng) as u64;
            StreamOp::insert(scatter(rank - 1, spec.universe_bits, key))
        })
        .collect())
}

/// Item id assigned to Zipf rank `rank` (1-based) by [`gen_zipf`].
pub fn zipf_item(spec: &StreamSpec, rank: u64) -> u64 {
    scatter(rank - 1, spec.universe_bits, derive_seed(spec.seed, 2))
}

/// Parses `<id>,<+1|-1>` lines; `#` starts a comment line, blank lines are skipped.
pub fn parse_stream<R: BufRead>(
    reader: R,
    universe_bits: u32,
    origin: &Path,
) -> Result<Vec<StreamOp>> {
    let universe = if universe_bits >= 64 {
        u64::MAX
    } else {
        1u64 << universe_bits
    };
    let mut ops = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| Error::Io {
            path: origin.to_path_buf(),
            source,
        })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |reason: String| Error::Parse {
            path: origin.to_path_buf(),
            line: line_no,
            reason,
        };
        let (id, value) = line
            .split_once(',')
            .ok_or_else(|| parse_err(format!("expected `<id>,<+1|-1>`, got `{line}`")))?;
        let item: u64 = id
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad item id `{}`", id.trim())))?;
        let value = match value.trim() {
            "+1" | "1" => 1,
            "-1" => -1,
            other => return Err(parse_err(format!("value must be +1 or -1, got `{other}`"))),
        };
        if item >= universe {
            return Err(parse_err(format!(
                "item {item} is outside the universe [0, {universe})"
            )));
        }
        ops.push(StreamOp::new(item, value)?);
    }
    Ok(ops)
}

pub fn load_stream(path: &Path, universe_bits: u32) -> Result<Vec<StreamOp>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_stream(BufReader::new(file), universe_bits, path)
}

/// Interleaves deletions into an insert-only stream.
///
/// Exactly `round(n p / (1 - p))` inserts, chosen uniformly, are each followed
/// by the deletion of a uniformly chosen live occurrence, so the deletion
/// share is `p` and every prefix keeps non-negative net counts.
pub fn with_deletions(stream: &[StreamOp], p_del: f64, seed: u64) -> Result<Vec<StreamOp>> {
    if !(0.0..0.5).contains(&p_del) {
        return Err(Error::param(
            "p_del",
            format!("must lie in [0, 0.5), got {p_del}"),
        ));
    }
    if p_del == 0.0 {
        return Ok(stream.to_vec());
    }
    if let Some(op) = stream.iter().find(|op| op.delta.value() < 0) {
        return Err(Error::param(
            "stream",
            format!(
                "deletions can only be added to an insert-only stream (found delete of {})",
                op.item
            ),
        ));
    }
    let n = stream.len();
    let deletes = ((n as f64 * p_del / (1.0 - p_del)).round() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut followed = vec![false; n];
    for i in index::sample(&mut rng, n, deletes) {
        followed[i] = true;
    }
    let mut live: Vec<u64> = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(n + deletes);
    for (op, delete_after) in stream.iter().zip(followed) {
        out.push(*op);
        live.push(op.item);
        if delete_after {
            let victim = live.swap_remove(rng.random_range(0..live.len()));
            out.push(StreamOp::delete(victim));
        }
    }
    Ok(out)
}
