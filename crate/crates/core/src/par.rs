//! Data-parallel helpers and deterministic RNG stream derivation.
//!
//! With the `parallel` feature the maps run on the rayon pool; without it
//! they run sequentially. Either way results come back in index order, so
//! output never depends on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The RNG used everywhere in the crate.
pub type StreamRng = ChaCha8Rng;

/// Maps `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Sequential counterpart of [`map_indexed`], used as the baseline in
/// benchmarks and where the caller already parallelises one level up.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Whether the crate was built with rayon support.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Configures the global worker pool. Returns false if the pool was already
/// initialised or the crate was built without the `parallel` feature.
pub fn configure_threads(threads: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        false
    }
}

/// SplitMix64 finaliser; mixes a parent seed with a tag into a child seed.
pub fn derive_seed(parent: u64, tag: u64) -> u64 {
    let mut z = parent ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds an independent stream for `(seed, path...)`.
pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    let s = path.iter().fold(seed, |acc, &t| derive_seed(acc, t));
    StreamRng::seed_from_u64(s)
}

/// Draws one base seed from `rng`; child `i` then uses `child(base, i)`.
pub fn fork_base<R: Rng + ?Sized>(rng: &mut R) -> u64 {
    rng.random::<u64>()
}

pub fn child(base: u64, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(base, index))
}
