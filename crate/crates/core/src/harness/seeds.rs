//! Hierarchical, platform-stable seed derivation: master → module → index.
//! Every random draw in the toolkit flows through one of these streams, so
//! (config, master seed) fully determines every result.

use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;
use sha2::{Digest, Sha256};

/// Derives an independent, reproducible stream for (module tag, index).
pub fn derive_rng(master: u64, module: &str, index: u64) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(module.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(seed)
}

/// Derives a u64 sub-seed (for nested structures owning their own seeds,
/// like the shared Poisson field).
pub fn derive_seed(master: u64, module: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(module.as_bytes());
    hasher.update(index.to_le_bytes());
    let d = hasher.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = derive_rng(1, "x", 0);
        let mut b = derive_rng(1, "x", 0);
        let mut c = derive_rng(1, "x", 1);
        let va: u64 = a.gen();
        assert_eq!(va, b.gen::<u64>());
        assert_ne!(va, c.gen::<u64>());
        assert_ne!(derive_seed(1, "x", 0), derive_seed(2, "x", 0));
    }
}
