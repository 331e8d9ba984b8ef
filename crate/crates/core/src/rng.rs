//! Per-path random streams.
//!
//! Path `i` of an ensemble with master seed `m` draws from a ChaCha8 generator
//! keyed by four consecutive SplitMix64 outputs, starting from the state
//! `mix64(m) ^ mix64(i + 1)`. No generator is shared between paths, so an
//! ensemble is a pure function of `(m, path count)` regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer (Stafford variant 13).
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 256-bit ChaCha key for path `path_index` under `master_seed`.
pub fn path_key(master_seed: u64, path_index: u64) -> [u8; 32] {
    let mut state = mix64(master_seed) ^ mix64(path_index.wrapping_add(1));
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = state.wrapping_add(GOLDEN_GAMMA);
        chunk.copy_from_slice(&mix64(state).to_le_bytes());
    }
    key
}

pub fn path_rng(master_seed: u64, path_index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(path_key(master_seed, path_index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn mix64_reference_values() {
        // First SplitMix64 outputs for seed 0: mix64(0 + gamma), mix64(0 + 2 gamma).
        assert_eq!(mix64(GOLDEN_GAMMA), 0xE220_A839_7B1D_CDAF);
        assert_eq!(mix64(GOLDEN_GAMMA.wrapping_mul(2)), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let draw = |seed, i| {
            let mut rng = path_rng(seed, i);
            (0..4).map(|_| rng.random::<u64>()).collect::<Vec<_>>()
        };
        let (a, b) = (draw(7, 3), draw(7, 3));
        assert_eq!(a, b);
        assert_ne!(path_key(7, 3), path_key(7, 4));
        assert_ne!(path_key(7, 3), path_key(8, 3));
    }
}
