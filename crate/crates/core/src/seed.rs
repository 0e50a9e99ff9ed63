//! Named seed derivation, so each stage gets an independent stream from
//! one global seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// 64-bit seed for `stage` under `global`.
pub fn derive_seed(global: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(stage.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Seed for item `index` of a stage, e.g. per-node walks.
pub fn derive_indexed(global: u64, stage: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(stage.as_bytes());
    h.update([0u8]);
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn stage_rng(global: u64, stage: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(global, stage))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_and_distinct() {
        assert_eq!(derive_seed(7, "walks"), derive_seed(7, "walks"));
        assert_ne!(derive_seed(7, "walks"), derive_seed(7, "skipgram"));
        assert_ne!(derive_seed(7, "walks"), derive_seed(8, "walks"));
        assert_ne!(derive_indexed(7, "walks", 0), derive_indexed(7, "walks", 1));
    }
}
