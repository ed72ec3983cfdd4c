//! Seeded random streams.
//!
//! Every simulation takes a `u64` seed. Work split across replications or
//! workers uses [`stream`] so that each unit owns an independent ChaCha
//! stream and results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `index` derived from `seed`.
pub fn stream(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Mixes a seed with a label so that distinct consumers of one user seed
/// (e.g. different k in a sweep) get unrelated streams.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `f(0), …, f(count − 1)` in index order, on the rayon pool when the
/// `parallel` feature is enabled.
pub fn map_indexed<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).collect()
    }
}

/// Runs `count` draws in fixed-size chunks, chunk `c` using `stream(seed, c)`,
/// and concatenates the results. The output does not depend on the thread count.
pub fn chunked_draws<T, F>(count: usize, chunk: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut SimRng, usize) -> Vec<T> + Sync + Send,
{
    let chunk = chunk.max(1);
    let chunks = count.div_ceil(chunk);
    map_indexed(chunks, |c| {
        let len = chunk.min(count - c * chunk);
        let mut rng = stream(seed, c as u64);
        f(&mut rng, len)
    })
    .into_iter()
    .flatten()
    .collect()
}
