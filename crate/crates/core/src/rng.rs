//! Seeded generators and stable seed derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type SimRng = ChaCha20Rng;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Avalanche finaliser from SplitMix64.
fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// FNV-1a over the given byte chunks, finalised with SplitMix64. Stable across platforms and releases.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for &b in *p {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    mix64(h)
}

/// Seed for one grid cell, a function of the base seed and gap coordinates only.
pub fn cell_seed(base: u64, gamma_r: f64, gamma_rs: f64, gamma_tau: f64) -> u64 {
    stable_hash(&[
        &base.to_le_bytes(),
        &gamma_r.to_bits().to_le_bytes(),
        &gamma_rs.to_bits().to_le_bytes(),
        &gamma_tau.to_bits().to_le_bytes(),
    ])
}

/// Independent sub-stream seed for a named stage.
pub fn derive(seed: u64, label: &str) -> u64 {
    stable_hash(&[&seed.to_le_bytes(), label.as_bytes()])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_seed_is_stable() {
        // Frozen so that seeds never drift between releases.
        assert_eq!(cell_seed(0, 0.1, 0.4, 0.1), 10_254_737_163_593_003_451);
        assert_ne!(cell_seed(0, 0.1, 0.4, 0.1), cell_seed(0, 0.4, 0.1, 0.1));
        assert_ne!(cell_seed(0, 0.1, 0.4, 0.1), cell_seed(1, 0.1, 0.4, 0.1));
    }

    #[test]
    fn derive_separates_labels() {
        assert_ne!(derive(5, "dgp"), derive(5, "train"));
    }
}
