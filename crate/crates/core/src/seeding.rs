//! Stable seed derivation. Every random draw in the crate goes through a
//! ChaCha stream keyed by a hash of its context, so results never depend on
//! thread scheduling or on the order in which episodes are run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Incremental FNV-1a hasher. Unlike `DefaultHasher` its output is fixed
/// across Rust releases, which keeps recorded datasets reproducible.
#[derive(Debug, Clone, Copy)]
pub struct SeedHasher(u64);

impl Default for SeedHasher {
    fn default() -> Self {
        Self(FNV_OFFSET)
    }
}

impl SeedHasher {
    pub fn new(domain: &str) -> Self {
        Self::default().str(domain)
    }

    pub fn bytes(mut self, bytes: &[u8]) -> Self {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
        self
    }

    pub fn str(self, s: &str) -> Self {
        // length prefix keeps ("ab", "c") and ("a", "bc") apart
        self.u64(s.len() as u64).bytes(s.as_bytes())
    }

    pub fn u64(self, v: u64) -> Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn finish(self) -> u64 {
        // splitmix finalizer; FNV alone leaves the low bits poorly mixed
        let mut z = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.finish())
    }
}
