//! Named, stable seed substreams.
//!
//! Every random decision in an experiment draws from a ChaCha8 stream whose
//! seed is derived from the master seed plus a label and a list of indices.
//! The derivation is a fixed FNV-1a/SplitMix64 construction so it does not
//! change across compiler or std versions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(state, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Derive a child seed from `master`, a stream label, and positional indices.
pub fn derive_seed(master: u64, label: &str, indices: &[u64]) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &master.to_le_bytes());
    h = fnv1a(h, label.as_bytes());
    for idx in indices {
        // separator so ("a", [1, 2]) and ("a", [12]) never collide bytewise
        h = fnv1a(h, &[0xff]);
        h = fnv1a(h, &idx.to_le_bytes());
    }
    splitmix64(h)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A master seed with helpers for the named substreams used by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    master: u64,
}

impl SeedStream {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn seed(&self, label: &str, indices: &[u64]) -> u64 {
        derive_seed(self.master, label, indices)
    }

    pub fn rng(&self, label: &str, indices: &[u64]) -> ChaCha8Rng {
        rng_from_seed(self.seed(label, indices))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_label_sensitive() {
        let s = SeedStream::new(42);
        assert_eq!(s.seed("data", &[]), s.seed("data", &[]));
        assert_ne!(s.seed("data", &[]), s.seed("init", &[]));
        assert_ne!(s.seed("client", &[1, 2]), s.seed("client", &[2, 1]));
        assert_ne!(s.seed("client", &[1, 2]), s.seed("client", &[12]));
        assert_ne!(SeedStream::new(1).seed("x", &[]), SeedStream::new(2).seed("x", &[]));
    }

    #[test]
    fn derivation_is_frozen() {
        // Pinned so a refactor of the hash cannot silently reshuffle experiments.
        assert_eq!(derive_seed(0, "", &[]), 0x5ba3_14b8_cfda_3b6b);
        assert_eq!(derive_seed(42, "client", &[3, 7]), 0xc462_4fba_fae7_6f85);
    }

    #[test]
    fn primitives_match_reference_vectors() {
        // Published FNV-1a 64 vectors and the first SplitMix64 output for state 0.
        assert_eq!(fnv1a(FNV_OFFSET, b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(FNV_OFFSET, b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a(FNV_OFFSET, b"foobar"), 0x8594_4171_f739_67e8);
        assert_eq!(splitmix64(0), 0xe220_a839_7b1d_cdaf);
    }
}
