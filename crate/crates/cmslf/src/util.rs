//! Small shared helpers: deterministic hashing for per-pixel RNG streams and
//! a parallel-or-serial loop shim.

/// SplitMix64 finalizer. Used to derive independent, order-free RNG seeds
/// from (seed, camera, pixel) tuples so renders are byte-identical no matter
/// how work is scheduled across threads.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        let mut z = h ^ p.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// Apply `f(index, item)` to every element, in parallel when the `parallel`
/// feature is enabled. Results must only depend on the element and its index.
#[cfg(feature = "parallel")]
pub fn par_for_each_enumerated<T: Send, F>(items: &mut [T], f: F)
where
    F: Fn(usize, &mut T) + Send + Sync,
{
    use rayon::prelude::*;
    items
        .par_iter_mut()
        .enumerate()
        .for_each(|(idx, item)| f(idx, item));
}

#[cfg(not(feature = "parallel"))]
pub fn par_for_each_enumerated<T: Send, F>(items: &mut [T], f: F)
where
    F: Fn(usize, &mut T) + Send + Sync,
{
    for (idx, item) in items.iter_mut().enumerate() {
        f(idx, item);
    }
}
