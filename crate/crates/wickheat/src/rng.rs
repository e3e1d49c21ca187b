//! Seed splitting.
//!
//! Every random stream is a ChaCha8 generator keyed by a 64-bit seed. Child
//! seeds are derived from a parent by mixing in a label (FNV-1a hash of its
//! bytes) or a replicate index, each followed by a SplitMix64 finalizer:
//!
//! ```text
//! child(s, label) = mix(s ^ fnv1a(label))
//! index(s, i)     = mix(s ^ mix(i + 0x9E3779B97F4A7C15))
//! ```
//!
//! A stream is therefore a pure function of (root seed, path of labels and
//! indices), independent of thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Seed(pub u64);

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

impl Seed {
    pub fn child(self, label: &str) -> Seed {
        Seed(mix(self.0 ^ fnv1a(label.as_bytes())))
    }

    pub fn index(self, i: u64) -> Seed {
        Seed(mix(self.0 ^ mix(i.wrapping_add(0x9E37_79B9_7F4A_7C15))))
    }

    pub fn rng(self) -> Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

impl From<u64> for Seed {
    fn from(s: u64) -> Self {
        Seed(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn children_differ_and_repeat() {
        let s = Seed(7);
        assert_eq!(s.child("field").index(3), s.child("field").index(3));
        assert_ne!(s.child("field"), s.child("paths"));
        assert_ne!(s.index(0), s.index(1));
        let a: u64 = s.rng().random();
        let b: u64 = s.rng().random();
        assert_eq!(a, b);
    }
}
