//! Uniform interface over the six self-synchronizing schemes.
//!
//! The oracle harness, the channel simulator and the attack suite all drive
//! schemes exclusively through this module, so they contain no per-scheme
//! code. A scheme exposes three session kinds:
//!
//! * encryption sessions (the transmitter kernel),
//! * decryption sessions (the receiver kernel),
//! * synchronized-encryption sessions (the receiver's update map used as an
//!   encryptor, the SE oracle path).
//!
//! Per-query emission conventions. An encryption session answers each
//! plaintext step with the block the kernel emits at that step: schemes with
//! delay d=0 answer with the encryption of the queried block, schemes with
//! d=1 answer one block behind (the first answer is the IV echo and `stop`
//! flushes the pending block). An SE session answers immediately at every
//! delay; for d=1 schemes it additionally has an initialization block (the IV
//! echo) available before the first query, and `stop` yields bottom.

use crate::gf::FieldVector;
use crate::rng::DeterministicRng;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeId {
    S4,
    Cbc,
    Cfb,
    Dcbc,
    Mdcbc,
    Mcfb,
}

impl SchemeId {
    pub const ALL: [SchemeId; 6] = [
        SchemeId::S4,
        SchemeId::Cbc,
        SchemeId::Cfb,
        SchemeId::Dcbc,
        SchemeId::Mdcbc,
        SchemeId::Mcfb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::S4 => "s4",
            SchemeId::Cbc => "cbc",
            SchemeId::Cfb => "cfb",
            SchemeId::Dcbc => "dcbc",
            SchemeId::Mdcbc => "mdcbc",
            SchemeId::Mcfb => "mcfb",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|id| id.name() == s)
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One plaintext or ciphertext block. Bit blocks belong to the classic
/// modes, field blocks to the switched cipher.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Block {
    Bits(u64),
    Field(FieldVector),
}

impl Block {
    pub fn as_bits(&self) -> u64 {
        match self {
            Block::Bits(b) => *b,
            Block::Field(_) => panic!("expected a bit block"),
        }
    }

    pub fn as_field(&self) -> &FieldVector {
        match self {
            Block::Field(v) => v,
            Block::Bits(_) => panic!("expected a field block"),
        }
    }
}

/// Initialization vector as transmitted on the channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Iv {
    Bits(u64),
    S4 { mem0: FieldVector, c0: FieldVector },
}

impl Iv {
    pub fn as_bits(&self) -> u64 {
        match self {
            Iv::Bits(b) => *b,
            Iv::S4 { .. } => panic!("expected a bit IV"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlainInput {
    Block(Block),
    Stop,
}

/// Tagged step output. `Bot` and `Ack` are relayed verbatim to adversaries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutput {
    Bot,
    Ack,
    Block(Block),
}

impl StepOutput {
    pub fn into_block(self) -> Option<Block> {
        match self {
            StepOutput::Block(b) => Some(b),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SchemeError {
    Finished,
    WrongBlockKind,
    IvMismatch,
    Internal(String),
}

impl fmt::Display for SchemeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeError::Finished => write!(f, "session already received stop"),
            SchemeError::WrongBlockKind => write!(f, "block kind or size does not fit the scheme"),
            SchemeError::IvMismatch => write!(f, "IV does not fit the scheme"),
            SchemeError::Internal(s) => write!(f, "internal error: {s}"),
        }
    }
}

impl std::error::Error for SchemeError {}

/// Delay, synchronization delay, and startup ciphertext memory per scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchemeConstants {
    pub d: usize,
    pub t_s: usize,
    pub t_c: usize,
}

/// Snapshot of an internal state vector, for trace instrumentation only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StateSnapshot {
    Bits(u64),
    Field(FieldVector),
}

/// Public-side parameters an adversary is entitled to see.
#[derive(Debug, Clone)]
pub enum PublicInfo {
    Mode {
        width: usize,
        /// The nilpotent map, when the instance publishes one.
        f: Option<crate::modes::NilpotentMap>,
    },
    S4 {
        q: u64,
        n: usize,
        ell: usize,
        q_mats: Vec<crate::gf::FieldMatrix>,
        e_mats: Vec<crate::gf::FieldMatrix>,
        b_mats: Vec<crate::gf::FieldMatrix>,
        m_mat: crate::gf::FieldMatrix,
        rule: crate::s4::SwitchRule,
    },
}

pub trait EncSession {
    fn step(&mut self, input: PlainInput) -> Result<StepOutput, SchemeError>;
    /// Current transmitter state s(t+1) after t plaintext steps.
    fn state(&self) -> StateSnapshot;
}

pub trait DecSession {
    fn step(&mut self, c: &Block) -> Result<StepOutput, SchemeError>;
    /// Current receiver state after the blocks consumed so far.
    fn state(&self) -> StateSnapshot;
}

pub trait SeSession {
    /// Block emitted by the initialization branch, where the scheme has one.
    fn init_block(&self) -> Option<Block>;
    fn step(&mut self, input: PlainInput) -> Result<StepOutput, SchemeError>;
}

/// Factory plus block algebra for one scheme instance (one key).
pub trait Scheme {
    fn id(&self) -> SchemeId;
    fn constants(&self) -> SchemeConstants;

    /// Post-corruption window: recovered plaintext is guaranteed correct at
    /// most this many blocks after the last corrupted one.
    fn resync_window(&self) -> usize;

    fn random_iv(&self, rng: &mut DeterministicRng) -> Iv;
    fn accepts_iv(&self, iv: &Iv) -> bool;

    fn zero_block(&self) -> Block;
    fn random_block(&self, rng: &mut DeterministicRng) -> Block;
    /// Group operation on plaintext space (xor for bit blocks, addition mod
    /// q entrywise for field blocks).
    fn block_add(&self, a: &Block, b: &Block) -> Block;
    fn block_sub(&self, a: &Block, b: &Block) -> Block;
    fn block_fits(&self, b: &Block) -> bool;

    fn new_enc(&self, iv: &Iv, rng: &mut DeterministicRng) -> Result<Box<dyn EncSession>, SchemeError>;
    fn new_dec(&self, iv: &Iv, rng: &mut DeterministicRng) -> Result<Box<dyn DecSession>, SchemeError>;
    fn new_se(&self, iv: &Iv, rng: &mut DeterministicRng) -> Result<Box<dyn SeSession>, SchemeError>;

    /// Difference of two state snapshots in the scheme's own group, rendered
    /// as integer columns for traces.
    fn state_diff(&self, a: &StateSnapshot, b: &StateSnapshot) -> Vec<u64>;

    /// Number of columns `state_diff` produces.
    fn error_dim(&self) -> usize;

    /// Public parameters only; never secret key material.
    fn public_info(&self) -> PublicInfo;
}

/// Encrypt a full plaintext block sequence, returning every emitted
/// ciphertext block in order (stop is applied at the end).
pub fn encrypt_stream(
    session: &mut dyn EncSession,
    plaintext: &[Block],
) -> Result<Vec<Block>, SchemeError> {
    let mut out = Vec::with_capacity(plaintext.len() + 1);
    for p in plaintext {
        if let Some(b) = session.step(PlainInput::Block(p.clone()))?.into_block() {
            out.push(b);
        }
    }
    if let Some(b) = session.step(PlainInput::Stop)?.into_block() {
        out.push(b);
    }
    Ok(out)
}

/// Decrypt a ciphertext stream, returning the recovered plaintext blocks
/// (acknowledgements are dropped).
pub fn decrypt_stream(
    session: &mut dyn DecSession,
    ciphertext: &[Block],
) -> Result<Vec<Block>, SchemeError> {
    let mut out = Vec::with_capacity(ciphertext.len());
    for c in ciphertext {
        if let Some(b) = session.step(c)?.into_block() {
            out.push(b);
        }
    }
    Ok(out)
}
