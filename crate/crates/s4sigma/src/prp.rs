//! Keyed permutation families.
//!
//! Three permutation objects live here:
//!
//! * [`ElementPermutation`]: a table-based permutation of GF(q), either keyed
//!   (Fisher-Yates driven by a keyed stream) or sampled uniformly for the
//!   random-permutation arm of the swap experiment. Its entrywise lift acts
//!   on field vectors coordinate by coordinate.
//! * [`BlockPermutation`]: a small balanced Feistel network on bit blocks,
//!   used as the block cipher inside the classic modes.
//!
//! None of this is production-grade cryptography. The round function and the
//! key schedule are a 64-bit mixing function with published constants so that
//! test vectors are bit-exact across platforms; that is the design goal here,
//! not strength.

use crate::gf::{check_prime, FieldVector, GfError};
use crate::rng::{absorb, keyed_stream, mix64, DeterministicRng, GOLDEN_GAMMA};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PrpError {
    BadKeyLength(usize),
    ModulusTooLarge(u64),
    ModulusMismatch { left: u64, right: u64 },
    BadBlockWidth { width: usize },
    BlockOutOfRange { width: usize },
}

impl fmt::Display for PrpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrpError::BadKeyLength(k) => {
                write!(f, "key length {k} bits: must be a positive multiple of 8")
            }
            PrpError::ModulusTooLarge(q) => {
                write!(f, "q = {q} exceeds the table-based permutation limit 2^16")
            }
            PrpError::ModulusMismatch { left, right } => {
                write!(f, "modulus mismatch: {left} vs {right}")
            }
            PrpError::BadBlockWidth { width } => {
                write!(f, "block width {width} bits: must be even and within 2..=64")
            }
            PrpError::BlockOutOfRange { width } => {
                write!(f, "block value does not fit in {width} bits")
            }
        }
    }
}

impl std::error::Error for PrpError {}

const MAX_TABLE_Q: u64 = 1 << 16;

/// Secret key bytes plus the security parameter they were drawn for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretKey {
    bytes: Vec<u8>,
    k_bits: usize,
}

impl SecretKey {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        let k_bits = bytes.len() * 8;
        Self { bytes, k_bits }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn k_bits(&self) -> usize {
        self.k_bits
    }

    /// 64-bit digest used to key the Feistel rounds.
    pub fn digest(&self) -> u64 {
        absorb(0x004b_4559, &self.bytes)
    }
}

/// Draw k/8 key bytes from the deterministic generator.
pub fn gen_key(k_bits: usize, rng: &mut DeterministicRng) -> Result<SecretKey, PrpError> {
    if k_bits < 8 || !k_bits.is_multiple_of(8) {
        return Err(PrpError::BadKeyLength(k_bits));
    }
    let mut bytes = vec![0u8; k_bits / 8];
    rng.fill_bytes(&mut bytes);
    Ok(SecretKey { bytes, k_bits })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Table-based permutation of [0, q).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElementPermutation {
    q: u64,
    forward: Vec<u32>,
    inverse: Vec<u32>,
}

impl ElementPermutation {
    fn from_shuffle(q: u64, rng: &mut DeterministicRng) -> Result<Self, PrpError> {
        if q > MAX_TABLE_Q {
            return Err(PrpError::ModulusTooLarge(q));
        }
        let n = q as usize;
        let mut forward: Vec<u32> = (0..n as u32).collect();
        for i in (1..n).rev() {
            let j = rng.next_below(i as u64 + 1) as usize;
            forward.swap(i, j);
        }
        let mut inverse = vec![0u32; n];
        for (i, &v) in forward.iter().enumerate() {
            inverse[v as usize] = i as u32;
        }
        // Bijectivity check: inverse o forward must be the identity.
        debug_assert!(forward
            .iter()
            .enumerate()
            .all(|(i, &v)| inverse[v as usize] as usize == i));
        Ok(Self { q, forward, inverse })
    }

    pub fn identity(q: u64) -> Result<Self, PrpError> {
        if q > MAX_TABLE_Q {
            return Err(PrpError::ModulusTooLarge(q));
        }
        let forward: Vec<u32> = (0..q as u32).collect();
        Ok(Self { q, inverse: forward.clone(), forward })
    }

    /// The transposition 0 <-> 1 (identity when q < 2); used in tests.
    pub fn swap01(q: u64) -> Result<Self, PrpError> {
        let mut p = Self::identity(q)?;
        if q >= 2 {
            p.forward.swap(0, 1);
            p.inverse.swap(0, 1);
        }
        Ok(p)
    }

    pub fn q(&self) -> u64 {
        self.q
    }

    pub fn forward_table(&self) -> &[u32] {
        &self.forward
    }

    pub fn apply(&self, x: u64, dir: Direction) -> u64 {
        match dir {
            Direction::Forward => u64::from(self.forward[x as usize]),
            Direction::Inverse => u64::from(self.inverse[x as usize]),
        }
    }
}

/// Keyed permutation of GF(q): Fisher-Yates driven by a stream seeded from
/// (key, label).
pub fn derive_element_permutation(
    key: &SecretKey,
    q: u64,
    label: &[u8],
) -> Result<ElementPermutation, PrpError> {
    check_prime(q).map_err(|_| PrpError::ModulusTooLarge(q))?;
    let mut rng = keyed_stream(key.bytes(), label);
    ElementPermutation::from_shuffle(q, &mut rng)
}

/// Keyless uniform permutation of GF(q); the truly-random arm of the swap
/// experiment.
pub fn sample_uniform_permutation(
    q: u64,
    rng: &mut DeterministicRng,
) -> Result<ElementPermutation, PrpError> {
    ElementPermutation::from_shuffle(q, rng)
}

/// Entrywise action of the permutation on a field vector.
pub fn apply_entrywise(
    perm: &ElementPermutation,
    v: &FieldVector,
    dir: Direction,
) -> Result<FieldVector, GfError> {
    if perm.q != v.q() {
        return Err(GfError::ModulusMismatch { left: perm.q, right: v.q() });
    }
    Ok(FieldVector::new(
        v.q(),
        v.entries().iter().map(|&x| perm.apply(x, dir)).collect(),
    ))
}

/// Balanced Feistel network on `width`-bit blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPermutation {
    width: usize,
    rounds: usize,
    key_digest: u64,
}

impl BlockPermutation {
    pub fn new(key: &SecretKey, width: usize, rounds: usize) -> Result<Self, PrpError> {
        if !(2..=64).contains(&width) || !width.is_multiple_of(2) {
            return Err(PrpError::BadBlockWidth { width });
        }
        assert!(rounds >= 4, "at least 4 Feistel rounds");
        Ok(Self { width, rounds, key_digest: key.digest() })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn block_mask(&self) -> u64 {
        if self.width == 64 {
            u64::MAX
        } else {
            (1u64 << self.width) - 1
        }
    }

    fn half_mask(&self) -> u64 {
        (1u64 << (self.width / 2)) - 1
    }

    fn round_fn(&self, half: u64, round: u64) -> u64 {
        let subkey = mix64(self.key_digest ^ round.wrapping_mul(GOLDEN_GAMMA));
        mix64(half ^ subkey) & self.half_mask()
    }

    fn check(&self, block: u64) -> Result<(), PrpError> {
        if block & !self.block_mask() != 0 {
            return Err(PrpError::BlockOutOfRange { width: self.width });
        }
        Ok(())
    }

    pub fn encrypt(&self, block: u64) -> Result<u64, PrpError> {
        self.check(block)?;
        let h = self.width / 2;
        let mut left = block >> h;
        let mut right = block & self.half_mask();
        for r in 0..self.rounds {
            let (l, rr) = (right, left ^ self.round_fn(right, r as u64));
            left = l;
            right = rr;
        }
        Ok((left << h) | right)
    }

    pub fn decrypt(&self, block: u64) -> Result<u64, PrpError> {
        self.check(block)?;
        let h = self.width / 2;
        let mut left = block >> h;
        let mut right = block & self.half_mask();
        for r in (0..self.rounds).rev() {
            let (l, rr) = (right ^ self.round_fn(left, r as u64), left);
            left = l;
            right = rr;
        }
        Ok((left << h) | right)
    }
}

/// On-disk key file. Field names are frozen; see docs/formats.md.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyFile {
    pub version: u32,
    pub k_bits: usize,
    pub key_hex: String,
    pub q: u64,
    pub n: usize,
    pub ell: usize,
    pub m0: usize,
    pub seed_public: u64,
}

impl KeyFile {
    pub fn new(key: &SecretKey, q: u64, n: usize, ell: usize, seed_public: u64) -> Self {
        Self {
            version: 1,
            k_bits: key.k_bits(),
            key_hex: key.bytes().iter().map(|b| format!("{b:02x}")).collect(),
            q,
            n,
            ell,
            m0: n,
            seed_public,
        }
    }

    pub fn secret_key(&self) -> Result<SecretKey, String> {
        if !self.key_hex.len().is_multiple_of(2) {
            return Err("key_hex has odd length".into());
        }
        let bytes = (0..self.key_hex.len() / 2)
            .map(|i| u8::from_str_radix(&self.key_hex[2 * i..2 * i + 2], 16))
            .collect::<Result<Vec<u8>, _>>()
            .map_err(|e| format!("bad key_hex: {e}"))?;
        if bytes.len() * 8 != self.k_bits {
            return Err(format!(
                "key_hex length {} bytes disagrees with k_bits {}",
                bytes.len(),
                self.k_bits
            ));
        }
        Ok(SecretKey::from_bytes(bytes))
    }
}
