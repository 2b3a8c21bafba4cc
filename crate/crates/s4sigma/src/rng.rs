//! Deterministic randomness.
//!
//! Everything random in this crate flows through [`DeterministicRng`], a
//! SplitMix64 generator. Identical seeds produce identical streams on every
//! platform, which is what makes key files, ciphertext frames and experiment
//! reports reproducible from a single `--seed`.

/// SplitMix64 finalizer. Also used as the mixing primitive of the toy block
/// cipher and of keyed stream derivation.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Absorb bytes into a 64-bit digest, one mixing round per byte.
pub fn absorb(mut h: u64, data: &[u8]) -> u64 {
    for &b in data {
        h = mix64((h ^ u64::from(b)).wrapping_add(GOLDEN_GAMMA));
    }
    h
}

/// SplitMix64 stream generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeterministicRng {
    state: u64,
}

impl DeterministicRng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Derive an independent stream for a sub-task. The label keeps distinct
    /// call sites on distinct streams even when they share a parent seed.
    pub fn derive(&mut self, label: &[u8]) -> Self {
        let base = self.next_u64();
        Self::new(absorb(base, label))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform value in `[0, bound)` by rejection sampling.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "next_below: bound must be positive");
        if bound.is_power_of_two() {
            return self.next_u64() & (bound - 1);
        }
        // Reject the tail of the 2^64 range that does not divide evenly.
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % bound;
            }
        }
    }

    pub fn next_bool(&mut self) -> bool {
        self.next_u64() & 1 == 1
    }

    pub fn fill_bytes(&mut self, out: &mut [u8]) {
        for chunk in out.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}

/// Stream seeded from a byte string and a domain-separation label.
pub fn keyed_stream(key_bytes: &[u8], label: &[u8]) -> DeterministicRng {
    let mut h = absorb(0x5345_4544_u64, key_bytes);
    h = absorb(h ^ GOLDEN_GAMMA, label);
    DeterministicRng::new(h)
}
