//! File encryption: byte/field mapping and the framed ciphertext format.
//!
//! Frame layout (all integers little-endian):
//!
//! ```text
//! magic "S4S1" | version u8 = 1 | q u64 | n u16 | ell u16 | m0 u16 | n0 u16
//! | plaintext byte length u64 | IV (m0 + n field elements, u16 each)
//! | ciphertext blocks (n elements each, u16 each)
//! ```
//!
//! Plaintext bytes map one-to-one onto field elements (default q = 257, one
//! byte per element). The encryptor prepends t_s random dummy blocks so the
//! receiver, which starts from a free random state, is synchronized before
//! the first data block arrives; the decryptor discards the corresponding
//! prefix. Decryption is unauthenticated: a wrong key or a corrupted frame
//! yields garbage bytes, not an error.

use crate::gf::FieldVector;
use crate::rng::DeterministicRng;
use crate::s4::{DecOutput, EncInput, EncOutput, S4DecState, S4EncState, S4Error, S4Params, SwitchRule};
use crate::scheme::Iv;
use std::fmt;
use std::io::{Read, Write};

pub const MAGIC: &[u8; 4] = b"S4S1";
pub const VERSION: u8 = 1;

#[derive(Debug)]
pub enum FrameError {
    BadMagic,
    BadVersion(u8),
    Truncated,
    ParameterMismatch(String),
    QTooSmallForBytes(u64),
    ElementOverflow(u64),
    S4(S4Error),
    Io(std::io::Error),
}

impl fmt::Display for FrameError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameError::BadMagic => write!(f, "not a ciphertext frame (bad magic)"),
            FrameError::BadVersion(v) => write!(f, "unsupported frame version {v}"),
            FrameError::Truncated => write!(f, "frame is truncated"),
            FrameError::ParameterMismatch(s) => write!(f, "frame/key parameter mismatch: {s}"),
            FrameError::QTooSmallForBytes(q) => {
                write!(f, "q = {q} cannot carry byte plaintext (need q >= 257)")
            }
            FrameError::ElementOverflow(q) => {
                write!(f, "field element does not fit 2 bytes (q = {q})")
            }
            FrameError::S4(e) => write!(f, "cipher error: {e}"),
            FrameError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for FrameError {}

impl From<S4Error> for FrameError {
    fn from(e: S4Error) -> Self {
        FrameError::S4(e)
    }
}

impl From<std::io::Error> for FrameError {
    fn from(e: std::io::Error) -> Self {
        FrameError::Io(e)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameHeader {
    pub q: u64,
    pub n: usize,
    pub ell: usize,
    pub m0: usize,
    pub n0: usize,
    pub plaintext_len: u64,
}

/// Bytes to n-element blocks, zero-padded at the tail.
fn bytes_to_blocks(q: u64, n: usize, data: &[u8]) -> Vec<FieldVector> {
    data.chunks(n)
        .map(|chunk| {
            let mut vals = vec![0u64; n];
            for (i, &b) in chunk.iter().enumerate() {
                vals[i] = u64::from(b);
            }
            FieldVector::from_values(q, &vals)
        })
        .collect()
}

fn write_element(out: &mut Vec<u8>, v: u64, q: u64) -> Result<(), FrameError> {
    if v > u64::from(u16::MAX) {
        return Err(FrameError::ElementOverflow(q));
    }
    out.extend_from_slice(&(v as u16).to_le_bytes());
    Ok(())
}

/// Encrypt a byte string into a framed ciphertext. Dummy prefix and all
/// initial vectors are drawn from `rng`.
pub fn encrypt_bytes(
    params: &S4Params,
    rule: &SwitchRule,
    data: &[u8],
    rng: &mut DeterministicRng,
) -> Result<Vec<u8>, FrameError> {
    if params.q < 257 {
        return Err(FrameError::QTooSmallForBytes(params.q));
    }
    let dummies = params.n0;
    let (mut enc, iv) = S4EncState::init_enc(params, rng);
    enc.enc_step(params, rule, EncInput::Bootstrap)?;
    let mut blocks = Vec::new();
    let push = |out: EncOutput, blocks: &mut Vec<FieldVector>| match out {
        EncOutput::Block(c) | EncOutput::Final(c) => blocks.push(c),
        EncOutput::Bot => {}
    };
    for _ in 0..dummies {
        let dummy = FieldVector::random(params.q, params.n, rng);
        let out = enc.enc_step(params, rule, EncInput::Block(dummy))?;
        push(out, &mut blocks);
    }
    for block in bytes_to_blocks(params.q, params.n, data) {
        let out = enc.enc_step(params, rule, EncInput::Block(block))?;
        push(out, &mut blocks);
    }
    let out = enc.enc_step(params, rule, EncInput::Stop)?;
    push(out, &mut blocks);

    let (mem0, c0) = match &iv {
        Iv::S4 { mem0, c0 } => (mem0.clone(), c0.clone()),
        Iv::Bits(_) => unreachable!("field scheme"),
    };
    let mut out = Vec::with_capacity(29 + 2 * (params.m0 + params.n) + 2 * params.n * blocks.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&params.q.to_le_bytes());
    for v in [params.n, params.ell, params.m0, params.n0] {
        out.extend_from_slice(&(v as u16).to_le_bytes());
    }
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    for &e in mem0.entries().iter().chain(c0.entries()) {
        write_element(&mut out, e, params.q)?;
    }
    for block in &blocks {
        for &e in block.entries() {
            write_element(&mut out, e, params.q)?;
        }
    }
    Ok(out)
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8]) -> Result<(), FrameError> {
    r.read_exact(buf).map_err(|_| FrameError::Truncated)
}

/// Parse a frame into its header, IV and ciphertext blocks.
pub fn parse_frame(bytes: &[u8]) -> Result<(FrameHeader, Iv, Vec<FieldVector>), FrameError> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(FrameError::BadMagic);
    }
    let mut version = [0u8; 1];
    read_exact_or_truncated(&mut r, &mut version)?;
    if version[0] != VERSION {
        return Err(FrameError::BadVersion(version[0]));
    }
    let mut q8 = [0u8; 8];
    read_exact_or_truncated(&mut r, &mut q8)?;
    let q = u64::from_le_bytes(q8);
    let mut dims = [0usize; 4];
    for d in &mut dims {
        let mut b = [0u8; 2];
        read_exact_or_truncated(&mut r, &mut b)?;
        *d = usize::from(u16::from_le_bytes(b));
    }
    let [n, ell, m0, n0] = dims;
    let mut len8 = [0u8; 8];
    read_exact_or_truncated(&mut r, &mut len8)?;
    let plaintext_len = u64::from_le_bytes(len8);

    fn read_vec(r: &mut &[u8], q: u64, dim: usize) -> Result<FieldVector, FrameError> {
        let mut vals = Vec::with_capacity(dim);
        for _ in 0..dim {
            let mut b = [0u8; 2];
            read_exact_or_truncated(r, &mut b)?;
            vals.push(u64::from(u16::from_le_bytes(b)));
        }
        Ok(FieldVector::from_values(q, &vals))
    }
    let mem0 = read_vec(&mut r, q, m0)?;
    let c0 = read_vec(&mut r, q, n)?;
    let mut blocks = Vec::new();
    loop {
        if r.is_empty() {
            break;
        }
        if r.len() < 2 * n {
            return Err(FrameError::Truncated);
        }
        blocks.push(read_vec(&mut r, q, n)?);
    }
    Ok((
        FrameHeader { q, n, ell, m0, n0, plaintext_len },
        Iv::S4 { mem0, c0 },
        blocks,
    ))
}

/// Decrypt a framed ciphertext. Wrong keys or corrupted blocks produce
/// garbage bytes rather than failures, matching the unauthenticated design.
pub fn decrypt_bytes(
    params: &S4Params,
    rule: &SwitchRule,
    frame: &[u8],
    rng: &mut DeterministicRng,
) -> Result<Vec<u8>, FrameError> {
    let (header, iv, blocks) = parse_frame(frame)?;
    if header.q != params.q
        || header.n != params.n
        || header.ell != params.ell
        || header.m0 != params.m0
    {
        return Err(FrameError::ParameterMismatch(format!(
            "frame (q={}, n={}, ell={}, m0={}) vs key (q={}, n={}, ell={}, m0={})",
            header.q, header.n, header.ell, header.m0, params.q, params.n, params.ell, params.m0
        )));
    }
    let dummies = header.n0;
    let needed_blocks = dummies + (header.plaintext_len as usize).div_ceil(params.n) + 1;
    if blocks.len() < needed_blocks {
        return Err(FrameError::Truncated);
    }

    let mut dec = S4DecState::init_dec(params, &iv, rng)?;
    let c0 = match &iv {
        Iv::S4 { c0, .. } => c0.clone(),
        Iv::Bits(_) => unreachable!("field scheme"),
    };
    dec.dec_step(params, rule, &c0)?;
    let mut recovered = Vec::new();
    for c in &blocks {
        match dec.dec_step(params, rule, c)? {
            DecOutput::Ack => {}
            DecOutput::Block(p) => recovered.push(p),
        }
    }
    let mut bytes = Vec::with_capacity(header.plaintext_len as usize);
    for block in recovered.iter().skip(dummies) {
        for &e in block.entries() {
            bytes.push((e % 256) as u8);
        }
    }
    bytes.truncate(header.plaintext_len as usize);
    Ok(bytes)
}

/// Convenience wrappers over readers/writers for the command line.
pub fn encrypt_stream_to(
    params: &S4Params,
    rule: &SwitchRule,
    input: &mut impl Read,
    output: &mut impl Write,
    rng: &mut DeterministicRng,
) -> Result<(), FrameError> {
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    let frame = encrypt_bytes(params, rule, &data, rng)?;
    output.write_all(&frame)?;
    Ok(())
}

pub fn decrypt_stream_to(
    params: &S4Params,
    rule: &SwitchRule,
    input: &mut impl Read,
    output: &mut impl Write,
    rng: &mut DeterministicRng,
) -> Result<(), FrameError> {
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    let bytes = decrypt_bytes(params, rule, &data, rng)?;
    output.write_all(&bytes)?;
    Ok(())
}
