//! The switched self-synchronizing stream cipher over GF(q).
//!
//! State evolves by one of `ell` affine-plus-permutation updates selected by
//! a switching function; the receiver runs the matching unknown-input
//! observer and resynchronizes because the error dynamics contract under a
//! nilpotent matrix semigroup.
//!
//! Transmitter update at time t with mode j = sigma(t):
//!
//! ```text
//! z(t)   = L_j s(t) + B_j P(s(t))
//! c(t+1) = z(t) + F_j P(p(t))
//! s(t+1) = W m(t) + D_j s(t) + A_j P(s(t)) + E_j P(p(t))
//! m(t+1) = M m(t) + c(t)
//! ```
//!
//! Receiver update at time t (consuming c(t)) with mode j = sigma(t-1):
//!
//! ```text
//! zh(t)   = L_j sh(t) + B_j P(sh(t))
//! ph(t)   = Pinv(F_j^-1 (c(t) - zh(t)))
//! sh(t+1) = W mh(t) + D_j sh(t) + A_j P(sh(t)) + R_j (c(t) - zh(t))
//! mh(t+1) = M mh(t) + c(t-1)
//! ```
//!
//! with P the entrywise keyed permutation. The derived matrices are
//! R_j = E_j F_j^-1, A_j = R_j B_j and D_j = Q_j + R_j L_j, which makes the
//! state error obey e(t+1) = Q_{sigma(t)} e(t) exactly.

use crate::gf::{
    check_prime, mat_inv, mat_mul, mat_vec, sample_invertible, sample_nilpotent_family,
    sample_strictly_upper, semigroup_nilpotency_index, FieldMatrix, FieldVector, GfError,
    NilpotencyIndex,
};
use crate::prp::{
    apply_entrywise, derive_element_permutation, gen_key, Direction, ElementPermutation, PrpError,
    SecretKey,
};
use crate::rng::DeterministicRng;
use crate::scheme::{
    Block, DecSession, EncSession, Iv, PlainInput, Scheme, SchemeConstants, SchemeError, SchemeId,
    SeSession, StateSnapshot, StepOutput,
};
use serde::Serialize;
use std::fmt;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum S4Error {
    Gf(GfError),
    Prp(PrpError),
    BadParameter(String),
    Clock(String),
    Dimension(String),
    InsufficientHistory(String),
}

impl fmt::Display for S4Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            S4Error::Gf(e) => write!(f, "field error: {e}"),
            S4Error::Prp(e) => write!(f, "permutation error: {e}"),
            S4Error::BadParameter(s) => write!(f, "bad parameter: {s}"),
            S4Error::Clock(s) => write!(f, "clock violation: {s}"),
            S4Error::Dimension(s) => write!(f, "dimension mismatch: {s}"),
            S4Error::InsufficientHistory(s) => write!(f, "insufficient history: {s}"),
        }
    }
}

impl std::error::Error for S4Error {}

impl From<GfError> for S4Error {
    fn from(e: GfError) -> Self {
        S4Error::Gf(e)
    }
}

impl From<PrpError> for S4Error {
    fn from(e: PrpError) -> Self {
        S4Error::Prp(e)
    }
}

/// Mode selector. Both rules are computable by the transmitter at time t and
/// by the receiver at time t+1 from shared data only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwitchRule {
    TimeMod { ell: usize },
    /// Mode from the previously shared ciphertext block: entries summed as
    /// plain integers, reduced mod ell. Off by default.
    CiphertextDriven { ell: usize },
}

impl SwitchRule {
    pub fn ell(&self) -> usize {
        match self {
            SwitchRule::TimeMod { ell } | SwitchRule::CiphertextDriven { ell } => *ell,
        }
    }
}

/// Mode index in [1, ell] for time t.
pub fn switch_index(
    rule: &SwitchRule,
    t: u64,
    prev_c: Option<&FieldVector>,
) -> Result<usize, S4Error> {
    if t < 1 {
        return Err(S4Error::Clock(format!("switching is defined for t >= 1, got {t}")));
    }
    match rule {
        SwitchRule::TimeMod { ell } => Ok(((t - 1) as usize % ell) + 1),
        SwitchRule::CiphertextDriven { ell } => {
            let c = prev_c.ok_or_else(|| {
                S4Error::BadParameter("ciphertext-driven switching needs the shared block".into())
            })?;
            let sum: u64 = c.entries().iter().sum();
            Ok((sum as usize % ell) + 1)
        }
    }
}

/// Full parameter vector: secret side (W, L_j, F_j, the permutation), public
/// side (E_j, B_j, Q_j, M) and the derived A_j, R_j, D_j.
#[derive(Debug, Clone)]
pub struct S4Params {
    pub q: u64,
    pub n: usize,
    pub ell: usize,
    pub m0: usize,
    pub n0: usize,
    pub w: FieldMatrix,
    pub l: Vec<FieldMatrix>,
    pub f: Vec<FieldMatrix>,
    pub perm: ElementPermutation,
    pub e: Vec<FieldMatrix>,
    pub b: Vec<FieldMatrix>,
    pub q_mats: Vec<FieldMatrix>,
    pub m: FieldMatrix,
    pub a: Vec<FieldMatrix>,
    pub r: Vec<FieldMatrix>,
    pub d: Vec<FieldMatrix>,
    pub f_inv: Vec<FieldMatrix>,
}

impl S4Params {
    /// Build from independent parameters, computing R, A, D and the
    /// nilpotency index.
    #[allow(clippy::too_many_arguments)]
    pub fn derive(
        q: u64,
        n: usize,
        ell: usize,
        w: FieldMatrix,
        l: Vec<FieldMatrix>,
        f: Vec<FieldMatrix>,
        perm: ElementPermutation,
        e: Vec<FieldMatrix>,
        b: Vec<FieldMatrix>,
        q_mats: Vec<FieldMatrix>,
        m: FieldMatrix,
    ) -> Result<Self, S4Error> {
        check_prime(q)?;
        if n < 2 {
            return Err(S4Error::BadParameter("dimension n must be at least 2".into()));
        }
        if ell < 1 {
            return Err(S4Error::BadParameter("ell must be at least 1".into()));
        }
        for (name, group) in [("L", &l), ("F", &f), ("E", &e), ("B", &b), ("Q", &q_mats)] {
            if group.len() != ell {
                return Err(S4Error::BadParameter(format!(
                    "{name} family has {} members, expected {ell}",
                    group.len()
                )));
            }
        }
        let n0 = match semigroup_nilpotency_index(&q_mats, n)? {
            NilpotencyIndex::Index(i) => i,
            NilpotencyIndex::NotNilpotentWithin(_) => {
                return Err(S4Error::BadParameter(
                    "Q family is not nilpotent of index <= n".into(),
                ))
            }
        };
        let mut f_inv = Vec::with_capacity(ell);
        let mut r = Vec::with_capacity(ell);
        let mut a = Vec::with_capacity(ell);
        let mut d = Vec::with_capacity(ell);
        for j in 0..ell {
            let fi = mat_inv(&f[j])?;
            let rj = mat_mul(&e[j], &fi)?;
            a.push(mat_mul(&rj, &b[j])?);
            d.push(q_mats[j].add(&mat_mul(&rj, &l[j])?)?);
            r.push(rj);
            f_inv.push(fi);
        }
        Ok(Self {
            q,
            n,
            ell,
            m0: n, // memory update adds an m0-vector to an n-vector
            n0,
            w,
            l,
            f,
            perm,
            e,
            b,
            q_mats,
            m,
            a,
            r,
            d,
            f_inv,
        })
    }

    /// Replace derived A and D by explicitly given matrices. Used to load a
    /// parameter table verbatim so that `validate_params` can report which
    /// identities the table satisfies.
    pub fn with_explicit_derived(
        mut self,
        a: Vec<FieldMatrix>,
        d: Vec<FieldMatrix>,
    ) -> Result<Self, S4Error> {
        if a.len() != self.ell || d.len() != self.ell {
            return Err(S4Error::BadParameter("derived family sizes must equal ell".into()));
        }
        self.a = a;
        self.d = d;
        Ok(self)
    }

    /// Same parameters with another entrywise permutation. The state error
    /// trace is invariant under this swap.
    pub fn with_perm(mut self, perm: ElementPermutation) -> Result<Self, S4Error> {
        if perm.q() != self.q {
            return Err(S4Error::BadParameter("permutation modulus must match q".into()));
        }
        self.perm = perm;
        Ok(self)
    }

    fn p_fwd(&self, v: &FieldVector) -> FieldVector {
        apply_entrywise(&self.perm, v, Direction::Forward).expect("modulus fixed at construction")
    }

    fn p_inv(&self, v: &FieldVector) -> FieldVector {
        apply_entrywise(&self.perm, v, Direction::Inverse).expect("modulus fixed at construction")
    }
}

/// Secret-side bundle: W, the L family, the F family and the permutation.
type SecretSide = (FieldMatrix, Vec<FieldMatrix>, Vec<FieldMatrix>, ElementPermutation);

/// Derivation labels for the secret side.
fn secret_matrices(key: &SecretKey, q: u64, n: usize, ell: usize) -> Result<SecretSide, S4Error> {
    let mut w_rng = crate::rng::keyed_stream(key.bytes(), b"W");
    let w = sample_invertible(q, n, &mut w_rng)?;
    let mut l = Vec::with_capacity(ell);
    let mut f = Vec::with_capacity(ell);
    for j in 1..=ell {
        let mut rng = crate::rng::keyed_stream(key.bytes(), format!("L:{j}").as_bytes());
        l.push(sample_invertible(q, n, &mut rng)?);
        let mut rng = crate::rng::keyed_stream(key.bytes(), format!("F:{j}").as_bytes());
        f.push(sample_invertible(q, n, &mut rng)?);
    }
    let perm = derive_element_permutation(key, q, b"perm")?;
    Ok((w, l, f, perm))
}

/// Public-side bundle: the E family, the B family, the nilpotent family
/// and the memory matrix.
type PublicSide = (Vec<FieldMatrix>, Vec<FieldMatrix>, Vec<FieldMatrix>, FieldMatrix);

fn public_matrices(q: u64, n: usize, ell: usize, seed_public: u64) -> Result<PublicSide, S4Error> {
    let mut rng = DeterministicRng::new(seed_public);
    let mut e = Vec::with_capacity(ell);
    let mut b = Vec::with_capacity(ell);
    for _ in 0..ell {
        e.push(sample_invertible(q, n, &mut rng)?);
        b.push(sample_invertible(q, n, &mut rng)?);
    }
    let q_mats = sample_nilpotent_family(q, n, ell, &mut rng)?;
    let m = sample_strictly_upper(q, n, &mut rng);
    Ok((e, b, q_mats, m))
}

/// Key generation plus full parameter derivation. The secret side comes from
/// labeled streams keyed by the fresh key; the public side from a public seed
/// drawn off the same generator (and recorded in the key file).
pub fn gen_params(
    k_bits: usize,
    q: u64,
    n: usize,
    ell: usize,
    rng: &mut DeterministicRng,
) -> Result<(SecretKey, u64, S4Params), S4Error> {
    let key = gen_key(k_bits, rng)?;
    let seed_public = rng.next_u64();
    let params = params_from_key(&key, q, n, ell, seed_public)?;
    Ok((key, seed_public, params))
}

/// Rebuild the exact same parameters from a stored key and public seed.
pub fn params_from_key(
    key: &SecretKey,
    q: u64,
    n: usize,
    ell: usize,
    seed_public: u64,
) -> Result<S4Params, S4Error> {
    let (w, l, f, perm) = secret_matrices(key, q, n, ell)?;
    let (e, b, q_mats, m) = public_matrices(q, n, ell, seed_public)?;
    S4Params::derive(q, n, ell, w, l, f, perm, e, b, q_mats, m)
}

/// One boolean per parameter-contract check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub w_invertible: bool,
    pub l_invertible: Vec<bool>,
    pub f_invertible: Vec<bool>,
    pub e_invertible: Vec<bool>,
    pub b_invertible: Vec<bool>,
    pub m_strictly_upper: bool,
    pub memory_dim_matches: bool,
    pub nilpotency_index: Option<usize>,
    /// A_j == E_j F_j^-1 B_j
    pub a_identity: Vec<bool>,
    /// D_j == Q_j + R_j L_j (the identity the error law needs)
    pub d_identity_plus: Vec<bool>,
    /// D_j == R_j L_j - Q_j (the other sign)
    pub d_identity_minus: Vec<bool>,
    /// D_j - R_j L_j == Q_j, i.e. the error dynamics run on Q_j exactly
    pub error_dynamics_identity: Vec<bool>,
}

impl ValidationReport {
    pub fn all_ok(&self) -> bool {
        self.w_invertible
            && self.l_invertible.iter().all(|&x| x)
            && self.f_invertible.iter().all(|&x| x)
            && self.e_invertible.iter().all(|&x| x)
            && self.b_invertible.iter().all(|&x| x)
            && self.m_strictly_upper
            && self.memory_dim_matches
            && self.nilpotency_index.is_some()
            && self.a_identity.iter().all(|&x| x)
            && self.d_identity_plus.iter().all(|&x| x)
    }
}

pub fn validate_params(p: &S4Params) -> ValidationReport {
    let inv_ok = |m: &FieldMatrix| mat_inv(m).is_ok();
    let nilpotency_index = match semigroup_nilpotency_index(&p.q_mats, p.n) {
        Ok(NilpotencyIndex::Index(i)) => Some(i),
        _ => None,
    };
    let mut a_identity = Vec::with_capacity(p.ell);
    let mut d_plus = Vec::with_capacity(p.ell);
    let mut d_minus = Vec::with_capacity(p.ell);
    let mut err_dyn = Vec::with_capacity(p.ell);
    for j in 0..p.ell {
        let derived = mat_inv(&p.f[j])
            .and_then(|fi| mat_mul(&p.e[j], &fi))
            .and_then(|rj| {
                let a = mat_mul(&rj, &p.b[j])?;
                let rl = mat_mul(&rj, &p.l[j])?;
                Ok((a, rl))
            });
        match derived {
            Ok((a, rl)) => {
                a_identity.push(a == p.a[j]);
                let plus = p.q_mats[j].add(&rl).map(|x| x == p.d[j]).unwrap_or(false);
                let minus = rl.sub(&p.q_mats[j]).map(|x| x == p.d[j]).unwrap_or(false);
                d_plus.push(plus);
                d_minus.push(minus);
                err_dyn.push(p.d[j].sub(&rl).map(|x| x == p.q_mats[j]).unwrap_or(false));
            }
            Err(_) => {
                a_identity.push(false);
                d_plus.push(false);
                d_minus.push(false);
                err_dyn.push(false);
            }
        }
    }
    ValidationReport {
        w_invertible: inv_ok(&p.w),
        l_invertible: p.l.iter().map(inv_ok).collect(),
        f_invertible: p.f.iter().map(inv_ok).collect(),
        e_invertible: p.e.iter().map(inv_ok).collect(),
        b_invertible: p.b.iter().map(inv_ok).collect(),
        m_strictly_upper: p.m.is_strictly_upper_triangular(),
        memory_dim_matches: p.m.rows() == p.m0 && p.m0 == p.n,
        nilpotency_index,
        a_identity,
        d_identity_plus: d_plus,
        d_identity_minus: d_minus,
        error_dynamics_identity: err_dyn,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EncInput {
    /// The inputless t=0 transition.
    Bootstrap,
    Block(FieldVector),
    Stop,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EncOutput {
    Bot,
    Block(FieldVector),
    /// Pending block flushed by stop; the session is finished.
    Final(FieldVector),
}

/// Transmitter state machine. `s` holds s(t), `mem` holds m(t), `pending`
/// holds the delayed block c(t) that the next step emits (system delay 1).
/// `prev_s` retains s(t-1) so a co-progressing receiver's state can be
/// compared against the state it estimates.
#[derive(Debug, Clone)]
pub struct S4EncState {
    s: FieldVector,
    prev_s: FieldVector,
    mem: FieldVector,
    pending: FieldVector,
    t: u64,
    finished: bool,
    icv_mem0: FieldVector,
    icv_c0: FieldVector,
}

impl S4EncState {
    /// Fresh random initial condition: s(0) stays untransmitted, the IV is
    /// (m(0), c(0)).
    pub fn init_enc(p: &S4Params, rng: &mut DeterministicRng) -> (Self, Iv) {
        let s0 = FieldVector::random(p.q, p.n, rng);
        let mem0 = FieldVector::random(p.q, p.m0, rng);
        let c0 = FieldVector::random(p.q, p.n, rng);
        Self::init_enc_with(p, s0, mem0, c0).expect("dimensions fixed by construction")
    }

    /// Explicit initial condition (worked examples, tests, weakened builds).
    pub fn init_enc_with(
        p: &S4Params,
        s0: FieldVector,
        mem0: FieldVector,
        c0: FieldVector,
    ) -> Result<(Self, Iv), S4Error> {
        if s0.dim() != p.n || c0.dim() != p.n || mem0.dim() != p.m0 {
            return Err(S4Error::Dimension("initial vectors must be (n, m0, n)".into()));
        }
        if s0.q() != p.q || mem0.q() != p.q || c0.q() != p.q {
            return Err(S4Error::Dimension("initial vectors must live over GF(q)".into()));
        }
        let iv = Iv::S4 { mem0: mem0.clone(), c0: c0.clone() };
        Ok((
            Self {
                prev_s: s0.clone(),
                s: s0,
                mem: mem0.clone(),
                pending: c0.clone(),
                t: 0,
                finished: false,
                icv_mem0: mem0,
                icv_c0: c0,
            },
            iv,
        ))
    }

    pub fn icv(&self) -> (FieldVector, FieldVector) {
        (self.icv_mem0.clone(), self.icv_c0.clone())
    }

    pub fn clock(&self) -> u64 {
        self.t
    }

    /// Current state s(t).
    pub fn state(&self) -> &FieldVector {
        &self.s
    }

    pub fn memory(&self) -> &FieldVector {
        &self.mem
    }

    pub fn enc_step(
        &mut self,
        p: &S4Params,
        rule: &SwitchRule,
        input: EncInput,
    ) -> Result<EncOutput, S4Error> {
        if self.finished {
            return Err(S4Error::Clock("step after stop".into()));
        }
        match (self.t, input) {
            (0, EncInput::Bootstrap) => {
                // s(1)=s(0), m(1)=m(0), c(1)=c(0): nothing moves, no output.
                self.t = 1;
                Ok(EncOutput::Bot)
            }
            (0, _) => Err(S4Error::Clock("the t=0 bootstrap step must come first".into())),
            (_, EncInput::Bootstrap) => {
                Err(S4Error::Clock("bootstrap may only be taken at t=0".into()))
            }
            (t, EncInput::Block(plain)) => {
                if plain.dim() != p.n || plain.q() != p.q {
                    return Err(S4Error::Dimension("plaintext block must be n over GF(q)".into()));
                }
                let out = self.pending.clone();
                let j = switch_index(rule, t, Some(&out))? - 1;
                let ps = p.p_fwd(&self.s);
                let pp = p.p_fwd(&plain);
                let z = mat_vec(&p.l[j], &self.s)?.add(&mat_vec(&p.b[j], &ps)?)?;
                let c_next = z.add(&mat_vec(&p.f[j], &pp)?)?;
                let s_next = mat_vec(&p.w, &self.mem)?
                    .add(&mat_vec(&p.d[j], &self.s)?)?
                    .add(&mat_vec(&p.a[j], &ps)?)?
                    .add(&mat_vec(&p.e[j], &pp)?)?;
                self.mem = mat_vec(&p.m, &self.mem)?.add(&out)?;
                self.prev_s = std::mem::replace(&mut self.s, s_next);
                self.pending = c_next;
                self.t = t + 1;
                Ok(EncOutput::Block(out))
            }
            (_, EncInput::Stop) => {
                self.finished = true;
                Ok(EncOutput::Final(self.pending.clone()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecOutput {
    Ack,
    Block(FieldVector),
}

/// Receiver state machine. The clock counts consumed blocks starting from
/// c(0): feed c(0) from the IV first, then the wire stream c(1), c(2), ...
#[derive(Debug, Clone)]
pub struct S4DecState {
    s_hat: FieldVector,
    mem_hat: FieldVector,
    mem0: FieldVector,
    prev_c: FieldVector,
    t: u64,
}

impl S4DecState {
    pub fn init_dec(p: &S4Params, iv: &Iv, rng: &mut DeterministicRng) -> Result<Self, S4Error> {
        let s_hat = FieldVector::random(p.q, p.n, rng);
        Self::init_dec_with(p, iv, s_hat)
    }

    /// Explicit first receiver state sh(1).
    pub fn init_dec_with(p: &S4Params, iv: &Iv, s_hat1: FieldVector) -> Result<Self, S4Error> {
        let (mem0, c0) = match iv {
            Iv::S4 { mem0, c0 } => (mem0.clone(), c0.clone()),
            Iv::Bits(_) => return Err(S4Error::Dimension("expected a field IV".into())),
        };
        if mem0.dim() != p.m0 || c0.dim() != p.n || mem0.q() != p.q || c0.q() != p.q {
            return Err(S4Error::Dimension("IV must be (m0, n) over GF(q)".into()));
        }
        if s_hat1.dim() != p.n || s_hat1.q() != p.q {
            return Err(S4Error::Dimension("receiver state must be n over GF(q)".into()));
        }
        Ok(Self {
            s_hat: s_hat1,
            mem_hat: FieldVector::zero(p.q, p.m0),
            mem0,
            prev_c: c0,
            t: 0,
        })
    }

    pub fn clock(&self) -> u64 {
        self.t
    }

    /// Current receiver state sh(max(t, 1)).
    pub fn state(&self) -> &FieldVector {
        &self.s_hat
    }

    pub fn dec_step(
        &mut self,
        p: &S4Params,
        rule: &SwitchRule,
        c: &FieldVector,
    ) -> Result<DecOutput, S4Error> {
        if c.dim() != p.n || c.q() != p.q {
            return Err(S4Error::Dimension("ciphertext block must be n over GF(q)".into()));
        }
        match self.t {
            0 => {
                // Consumes c(0), already known from the IV.
                self.t = 1;
                Ok(DecOutput::Ack)
            }
            1 => {
                // sh(2) = sh(1); mh(2) = m(0); c(1) becomes the memory feed.
                self.mem_hat = self.mem0.clone();
                self.prev_c = c.clone();
                self.t = 2;
                Ok(DecOutput::Ack)
            }
            t => {
                let j = switch_index(rule, t - 1, Some(&self.prev_c))? - 1;
                let psh = p.p_fwd(&self.s_hat);
                let z_hat = mat_vec(&p.l[j], &self.s_hat)?.add(&mat_vec(&p.b[j], &psh)?)?;
                let diff = c.sub(&z_hat)?;
                let plain = p.p_inv(&mat_vec(&p.f_inv[j], &diff)?);
                let s_next = mat_vec(&p.w, &self.mem_hat)?
                    .add(&mat_vec(&p.d[j], &self.s_hat)?)?
                    .add(&mat_vec(&p.a[j], &psh)?)?
                    .add(&mat_vec(&p.r[j], &diff)?)?;
                self.mem_hat = mat_vec(&p.m, &self.mem_hat)?.add(&self.prev_c)?;
                self.s_hat = s_next;
                self.prev_c = c.clone();
                self.t = t + 1;
                Ok(DecOutput::Block(plain))
            }
        }
    }
}

/// e(t) = sh(t+1) - s(t), the quantity the synchronization proofs govern.
///
/// Computable live on a co-progressing pair: after the transmitter has
/// taken step t (emitting c(t)) and the receiver has consumed that block,
/// the receiver holds sh(t+1) while `prev_s` holds s(t).
pub fn error_vector(enc: &S4EncState, dec: &S4DecState) -> Result<FieldVector, S4Error> {
    let enc_t = enc.t.max(1);
    let dec_t = dec.t.max(1);
    if dec_t != enc_t {
        return Err(S4Error::Clock(format!(
            "receiver has consumed {dec_t} blocks but the transmitter took {enc_t} steps"
        )));
    }
    Ok(dec.s_hat.sub(&enc.prev_s)?)
}

/// Rebuild the live transmitter state s(t+1) from ciphertexts alone.
///
/// `recent_c` must hold the contiguous blocks c(first_index), ..., c(t+1)
/// and `recent_mem` the memory vector m(first_index), with
/// first_index <= t - t_s + 1. Unrolling the closed-loop recursion
/// s(h+1) = Q_{sigma(h)} s(h) + W m(h) + R_{sigma(h)} c(h+1) for t_s steps
/// kills the unknown state term because every length-t_s product of the Q
/// family vanishes.
pub fn reconstruct_state(
    p: &S4Params,
    rule: &SwitchRule,
    recent_c: &[FieldVector],
    first_index: u64,
    recent_mem: &FieldVector,
    t: u64,
) -> Result<FieldVector, S4Error> {
    let t_s = p.n0 as u64;
    if t < t_s {
        return Err(S4Error::Clock(format!("reconstruction needs t >= t_s = {t_s}, got {t}")));
    }
    let h0 = t - t_s + 1;
    if first_index > h0 {
        return Err(S4Error::InsufficientHistory(format!(
            "history must start at or before t - t_s + 1 = {h0}, got {first_index}"
        )));
    }
    if first_index < 1 {
        return Err(S4Error::InsufficientHistory("history starts at c(1)".into()));
    }
    let needed = (t + 2 - first_index) as usize;
    if recent_c.len() < needed {
        return Err(S4Error::InsufficientHistory(format!(
            "need {needed} blocks c({first_index})..c({}), got {}",
            t + 1,
            recent_c.len()
        )));
    }
    let c_at = |idx: u64| -> &FieldVector { &recent_c[(idx - first_index) as usize] };

    // Memories m(first..=t) from the M-recursion m(h+1) = M m(h) + c(h).
    let span = (t - first_index + 1) as usize;
    let mut mems: Vec<FieldVector> = Vec::with_capacity(span);
    mems.push(recent_mem.clone());
    for h in first_index..t {
        let next = mat_vec(&p.m, mems.last().unwrap())?.add(c_at(h))?;
        mems.push(next);
    }
    let mem_at = |idx: u64| -> &FieldVector { &mems[(idx - first_index) as usize] };

    let mut acc = FieldVector::zero(p.q, p.n);
    let mut prod = FieldMatrix::identity(p.q, p.n);
    for h in (h0..=t).rev() {
        let j = switch_index(rule, h, Some(c_at(h)))? - 1;
        let term = mat_vec(&p.w, mem_at(h))?.add(&mat_vec(&p.r[j], c_at(h + 1))?)?;
        acc = acc.add(&mat_vec(&prod, &term)?)?;
        prod = mat_mul(&prod, &p.q_mats[j])?;
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Generic scheme adapter
// ---------------------------------------------------------------------------

/// Scheme-interface wrapper around one parameter set.
#[derive(Clone)]
pub struct S4Scheme {
    params: Arc<S4Params>,
    rule: SwitchRule,
    /// Test-only weakening: pin s(0) and sh(1) instead of sampling them.
    /// This deliberately reintroduces the IV-determined-state flaw.
    fixed_initial_state: Option<FieldVector>,
}

impl S4Scheme {
    pub fn new(params: Arc<S4Params>, rule: SwitchRule) -> Self {
        Self { params, rule, fixed_initial_state: None }
    }

    /// Control build for the mixed-oracle experiment: both hidden initial
    /// states become the given constant. Never reachable from the CLI.
    pub fn weakened_for_tests(params: Arc<S4Params>, rule: SwitchRule, state: FieldVector) -> Self {
        Self { params, rule, fixed_initial_state: Some(state) }
    }

    pub fn params(&self) -> &S4Params {
        &self.params
    }

    pub fn rule(&self) -> &SwitchRule {
        &self.rule
    }

    fn initial_state(&self, rng: &mut DeterministicRng) -> FieldVector {
        match &self.fixed_initial_state {
            Some(s) => s.clone(),
            None => FieldVector::random(self.params.q, self.params.n, rng),
        }
    }
}

struct S4EncSession {
    params: Arc<S4Params>,
    rule: SwitchRule,
    kernel: S4EncState,
}

impl EncSession for S4EncSession {
    fn step(&mut self, input: PlainInput) -> Result<StepOutput, SchemeError> {
        let kin = match input {
            PlainInput::Block(Block::Field(v)) => EncInput::Block(v),
            PlainInput::Block(Block::Bits(_)) => return Err(SchemeError::WrongBlockKind),
            PlainInput::Stop => EncInput::Stop,
        };
        match self.kernel.enc_step(&self.params, &self.rule, kin) {
            Ok(EncOutput::Bot) => Ok(StepOutput::Bot),
            Ok(EncOutput::Block(c)) | Ok(EncOutput::Final(c)) => {
                Ok(StepOutput::Block(Block::Field(c)))
            }
            Err(S4Error::Clock(_)) => Err(SchemeError::Finished),
            Err(e) => Err(SchemeError::Internal(e.to_string())),
        }
    }

    fn state(&self) -> StateSnapshot {
        StateSnapshot::Field(self.kernel.state().clone())
    }
}

struct S4DecSession {
    params: Arc<S4Params>,
    rule: SwitchRule,
    kernel: S4DecState,
}

impl DecSession for S4DecSession {
    fn step(&mut self, c: &Block) -> Result<StepOutput, SchemeError> {
        let v = match c {
            Block::Field(v) => v,
            Block::Bits(_) => return Err(SchemeError::WrongBlockKind),
        };
        match self.kernel.dec_step(&self.params, &self.rule, v) {
            Ok(DecOutput::Ack) => Ok(StepOutput::Ack),
            Ok(DecOutput::Block(p)) => Ok(StepOutput::Block(Block::Field(p))),
            Err(e) => Err(SchemeError::Internal(e.to_string())),
        }
    }

    fn state(&self) -> StateSnapshot {
        StateSnapshot::Field(self.kernel.state().clone())
    }
}

/// The receiver update map run as an encryptor (the SE oracle path).
struct S4SeSession {
    params: Arc<S4Params>,
    rule: SwitchRule,
    s_hat: FieldVector,
    mem_hat: FieldVector,
    prev_c: FieldVector,
    init_block: FieldVector,
    t: u64,
    finished: bool,
}

impl SeSession for S4SeSession {
    fn init_block(&self) -> Option<Block> {
        Some(Block::Field(self.init_block.clone()))
    }

    fn step(&mut self, input: PlainInput) -> Result<StepOutput, SchemeError> {
        if self.finished {
            return Err(SchemeError::Finished);
        }
        let plain = match input {
            PlainInput::Block(Block::Field(v)) => v,
            PlainInput::Block(Block::Bits(_)) => return Err(SchemeError::WrongBlockKind),
            PlainInput::Stop => {
                self.finished = true;
                return Ok(StepOutput::Bot);
            }
        };
        let p = &self.params;
        if plain.dim() != p.n || plain.q() != p.q {
            return Err(SchemeError::WrongBlockKind);
        }
        let t = self.t;
        let run = || -> Result<(FieldVector, FieldVector, FieldVector), S4Error> {
            let j = switch_index(&self.rule, t - 1, Some(&self.prev_c))? - 1;
            let psh = p.p_fwd(&self.s_hat);
            let z_hat = mat_vec(&p.l[j], &self.s_hat)?.add(&mat_vec(&p.b[j], &psh)?)?;
            let c = z_hat.add(&mat_vec(&p.f[j], &p.p_fwd(&plain))?)?;
            let diff = c.sub(&z_hat)?;
            let s_next = mat_vec(&p.w, &self.mem_hat)?
                .add(&mat_vec(&p.d[j], &self.s_hat)?)?
                .add(&mat_vec(&p.a[j], &psh)?)?
                .add(&mat_vec(&p.r[j], &diff)?)?;
            let mem_next = mat_vec(&p.m, &self.mem_hat)?.add(&self.prev_c)?;
            Ok((c, s_next, mem_next))
        };
        let (c, s_next, mem_next) = run().map_err(|e| SchemeError::Internal(e.to_string()))?;
        self.s_hat = s_next;
        self.mem_hat = mem_next;
        self.prev_c = c.clone();
        self.t = t + 1;
        Ok(StepOutput::Block(Block::Field(c)))
    }
}

impl Scheme for S4Scheme {
    fn id(&self) -> SchemeId {
        SchemeId::S4
    }

    fn constants(&self) -> SchemeConstants {
        SchemeConstants {
            d: 1,
            t_s: self.params.n0,
            t_c: self.params.n0 + self.params.m0,
        }
    }

    fn resync_window(&self) -> usize {
        // A corrupted block also transits the receiver memory, so recovery
        // needs the Q horizon plus the M horizon.
        self.params.n0 + self.params.m0 + 1
    }

    fn random_iv(&self, rng: &mut DeterministicRng) -> Iv {
        Iv::S4 {
            mem0: FieldVector::random(self.params.q, self.params.m0, rng),
            c0: FieldVector::random(self.params.q, self.params.n, rng),
        }
    }

    fn accepts_iv(&self, iv: &Iv) -> bool {
        matches!(iv, Iv::S4 { mem0, c0 }
            if mem0.dim() == self.params.m0 && c0.dim() == self.params.n
            && mem0.q() == self.params.q && c0.q() == self.params.q)
    }

    fn zero_block(&self) -> Block {
        Block::Field(FieldVector::zero(self.params.q, self.params.n))
    }

    fn random_block(&self, rng: &mut DeterministicRng) -> Block {
        Block::Field(FieldVector::random(self.params.q, self.params.n, rng))
    }

    fn block_add(&self, a: &Block, b: &Block) -> Block {
        Block::Field(a.as_field().add(b.as_field()).expect("blocks share shape"))
    }

    fn block_sub(&self, a: &Block, b: &Block) -> Block {
        Block::Field(a.as_field().sub(b.as_field()).expect("blocks share shape"))
    }

    fn block_fits(&self, b: &Block) -> bool {
        matches!(b, Block::Field(v) if v.dim() == self.params.n && v.q() == self.params.q)
    }

    fn new_enc(
        &self,
        iv: &Iv,
        rng: &mut DeterministicRng,
    ) -> Result<Box<dyn EncSession>, SchemeError> {
        let (mem0, c0) = match iv {
            Iv::S4 { mem0, c0 } => (mem0.clone(), c0.clone()),
            Iv::Bits(_) => return Err(SchemeError::IvMismatch),
        };
        let s0 = self.initial_state(rng);
        let (mut kernel, _) = S4EncState::init_enc_with(&self.params, s0, mem0, c0)
            .map_err(|_| SchemeError::IvMismatch)?;
        kernel
            .enc_step(&self.params, &self.rule, EncInput::Bootstrap)
            .map_err(|e| SchemeError::Internal(e.to_string()))?;
        Ok(Box::new(S4EncSession {
            params: Arc::clone(&self.params),
            rule: self.rule,
            kernel,
        }))
    }

    fn new_dec(
        &self,
        iv: &Iv,
        rng: &mut DeterministicRng,
    ) -> Result<Box<dyn DecSession>, SchemeError> {
        let s_hat = self.initial_state(rng);
        let mut kernel = S4DecState::init_dec_with(&self.params, iv, s_hat)
            .map_err(|_| SchemeError::IvMismatch)?;
        let c0 = match iv {
            Iv::S4 { c0, .. } => c0.clone(),
            Iv::Bits(_) => return Err(SchemeError::IvMismatch),
        };
        // Consume c(0) here so the session sees the wire stream c(1), c(2), ...
        kernel
            .dec_step(&self.params, &self.rule, &c0)
            .map_err(|e| SchemeError::Internal(e.to_string()))?;
        Ok(Box::new(S4DecSession {
            params: Arc::clone(&self.params),
            rule: self.rule,
            kernel,
        }))
    }

    fn new_se(
        &self,
        iv: &Iv,
        rng: &mut DeterministicRng,
    ) -> Result<Box<dyn SeSession>, SchemeError> {
        let (mem0, c0) = match iv {
            Iv::S4 { mem0, c0 } => (mem0.clone(), c0.clone()),
            Iv::Bits(_) => return Err(SchemeError::IvMismatch),
        };
        if mem0.dim() != self.params.m0 || c0.dim() != self.params.n {
            return Err(SchemeError::IvMismatch);
        }
        let s_hat = self.initial_state(rng);
        Ok(Box::new(S4SeSession {
            params: Arc::clone(&self.params),
            rule: self.rule,
            s_hat,
            mem_hat: mem0,
            prev_c: c0.clone(),
            init_block: c0,
            t: 2,
            finished: false,
        }))
    }

    fn state_diff(&self, a: &StateSnapshot, b: &StateSnapshot) -> Vec<u64> {
        match (a, b) {
            (StateSnapshot::Field(x), StateSnapshot::Field(y)) => {
                x.sub(y).expect("snapshots share shape").entries().to_vec()
            }
            _ => panic!("field snapshots expected"),
        }
    }

    fn error_dim(&self) -> usize {
        self.params.n
    }

    fn public_info(&self) -> crate::scheme::PublicInfo {
        crate::scheme::PublicInfo::S4 {
            q: self.params.q,
            n: self.params.n,
            ell: self.params.ell,
            q_mats: self.params.q_mats.clone(),
            e_mats: self.params.e.clone(),
            b_mats: self.params.b.clone(),
            m_mat: self.params.m.clone(),
            rule: self.rule,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::paper_example;

    fn small_params(seed: u64) -> (SecretKey, S4Params) {
        let mut rng = DeterministicRng::new(seed);
        let (key, _, params) = gen_params(128, 7, 3, 2, &mut rng).unwrap();
        (key, params)
    }

    #[test]
    fn gen_params_validates() {
        let (_, params) = small_params(1);
        let report = validate_params(&params);
        assert!(report.all_ok(), "{report:?}");
    }

    #[test]
    fn gen_params_nilpotency_bound() {
        let mut rng = DeterministicRng::new(2);
        let (_, _, params) = gen_params(128, 257, 4, 3, &mut rng).unwrap();
        assert!(params.n0 <= 4);
    }

    #[test]
    fn gen_params_deterministic() {
        let mut a_rng = DeterministicRng::new(3);
        let mut b_rng = DeterministicRng::new(3);
        let (ka, sa, pa) = gen_params(128, 7, 3, 2, &mut a_rng).unwrap();
        let (kb, sb, pb) = gen_params(128, 7, 3, 2, &mut b_rng).unwrap();
        assert_eq!(ka, kb);
        assert_eq!(sa, sb);
        assert_eq!(pa.w, pb.w);
        assert_eq!(pa.d, pb.d);
        assert_eq!(pa.perm, pb.perm);
    }

    #[test]
    fn params_rebuild_from_key() {
        let mut rng = DeterministicRng::new(4);
        let (key, seed_public, params) = gen_params(128, 257, 4, 2, &mut rng).unwrap();
        let again = params_from_key(&key, 257, 4, 2, seed_public).unwrap();
        assert_eq!(params.w, again.w);
        assert_eq!(params.q_mats, again.q_mats);
        assert_eq!(params.d, again.d);
    }

    #[test]
    fn validation_flags_nonzero_memory_diagonal() {
        let (_, mut params) = small_params(5);
        let mut m = params.m.clone();
        m.set(1, 1, 3);
        params.m = m;
        let report = validate_params(&params);
        assert!(!report.m_strictly_upper);
        assert!(!report.all_ok());
    }

    #[test]
    fn validation_of_printed_example_matrices() {
        // The worked example prints A_j and D_j instead of deriving them.
        // Its A's satisfy the product identity; D_2 matches Q + R L while
        // the printed D_1 satisfies neither sign.
        let ex = paper_example();
        let params = ex.params_with_printed_derived().unwrap();
        let report = validate_params(&params);
        assert_eq!(report.a_identity, vec![true, true]);
        assert_eq!(report.d_identity_plus, vec![false, true]);
        assert_eq!(report.d_identity_minus, vec![false, false]);
        assert_eq!(report.nilpotency_index, Some(2));
    }

    #[test]
    fn switch_index_time_mod() {
        let rule = SwitchRule::TimeMod { ell: 2 };
        assert_eq!(switch_index(&rule, 1, None).unwrap(), 1);
        assert_eq!(switch_index(&rule, 2, None).unwrap(), 2);
        assert_eq!(switch_index(&rule, 3, None).unwrap(), 1);
        let one = SwitchRule::TimeMod { ell: 1 };
        for t in 1..10 {
            assert_eq!(switch_index(&one, t, None).unwrap(), 1);
        }
    }

    #[test]
    fn switch_index_ciphertext_driven() {
        let rule = SwitchRule::CiphertextDriven { ell: 2 };
        let c = FieldVector::from_values(7, &[1, 4, 4]);
        // Entries summed as integers: 9, then mod 2 plus one.
        assert_eq!(switch_index(&rule, 5, Some(&c)).unwrap(), 2);
        assert!(switch_index(&rule, 5, None).is_err());
    }

    #[test]
    fn init_enc_iv_equals_icv() {
        let (_, params) = small_params(6);
        let mut rng = DeterministicRng::new(60);
        let (enc, iv) = S4EncState::init_enc(&params, &mut rng);
        let (mem0, c0) = enc.icv();
        assert_eq!(iv, Iv::S4 { mem0, c0 });
    }

    #[test]
    fn init_enc_distinct_seeds_distinct_states() {
        let (_, params) = small_params(7);
        let (a, _) = S4EncState::init_enc(&params, &mut DeterministicRng::new(1));
        let (b, _) = S4EncState::init_enc(&params, &mut DeterministicRng::new(2));
        assert_ne!(a.state(), b.state());
    }

    #[test]
    fn bootstrap_emits_bot_and_first_block_is_c0() {
        let ex = paper_example();
        let params = ex.params().unwrap();
        let rule = ex.rule();
        let (mut enc, _) = S4EncState::init_enc_with(
            &params,
            ex.s0(),
            ex.mem0(),
            ex.c0(),
        )
        .unwrap();
        assert_eq!(
            enc.enc_step(&params, &rule, EncInput::Bootstrap).unwrap(),
            EncOutput::Bot
        );
        let out = enc
            .enc_step(&params, &rule, EncInput::Block(FieldVector::zero(7, 3)))
            .unwrap();
        assert_eq!(out, EncOutput::Block(ex.c0()));
    }

    #[test]
    fn clock_violations_are_errors() {
        let (_, params) = small_params(8);
        let rule = SwitchRule::TimeMod { ell: params.ell };
        let mut rng = DeterministicRng::new(80);
        let (mut enc, _) = S4EncState::init_enc(&params, &mut rng);
        let block = FieldVector::zero(params.q, params.n);
        assert!(enc.enc_step(&params, &rule, EncInput::Block(block.clone())).is_err());
        enc.enc_step(&params, &rule, EncInput::Bootstrap).unwrap();
        assert!(enc.enc_step(&params, &rule, EncInput::Bootstrap).is_err());
        enc.enc_step(&params, &rule, EncInput::Stop).unwrap();
        assert!(enc.enc_step(&params, &rule, EncInput::Block(block)).is_err());
    }

    /// Straight-line transcription of the update equations, written
    /// independently of the state machine; drives the trace comparison.
    fn straight_line_trace(
        params: &S4Params,
        s0: &FieldVector,
        mem0: &FieldVector,
        c0: &FieldVector,
        plains: &[FieldVector],
    ) -> Vec<FieldVector> {
        let ell = params.ell as u64;
        let mut s = s0.clone();
        let mut mem = mem0.clone();
        let mut cs = vec![c0.clone()];
        for (idx, p) in plains.iter().enumerate() {
            let t = idx as u64 + 1;
            let j = ((t - 1) % ell) as usize;
            let ps = params.p_fwd(&s);
            let pp = params.p_fwd(p);
            let z = mat_vec(&params.l[j], &s)
                .unwrap()
                .add(&mat_vec(&params.b[j], &ps).unwrap())
                .unwrap();
            let c_next = z.add(&mat_vec(&params.f[j], &pp).unwrap()).unwrap();
            let s_next = mat_vec(&params.w, &mem)
                .unwrap()
                .add(&mat_vec(&params.d[j], &s).unwrap())
                .unwrap()
                .add(&mat_vec(&params.a[j], &ps).unwrap())
                .unwrap()
                .add(&mat_vec(&params.e[j], &pp).unwrap())
                .unwrap();
            let c_t = cs[idx].clone();
            mem = mat_vec(&params.m, &mem).unwrap().add(&c_t).unwrap();
            s = s_next;
            cs.push(c_next);
        }
        cs
    }

    #[test]
    fn kernel_matches_straight_line_evaluator() {
        let ex = paper_example();
        let params = ex.params().unwrap();
        let rule = ex.rule();
        let mut rng = DeterministicRng::new(999);
        let plains: Vec<FieldVector> =
            (0..10).map(|_| FieldVector::random(7, 3, &mut rng)).collect();
        let expected = straight_line_trace(&params, &ex.s0(), &ex.mem0(), &ex.c0(), &plains);

        let (mut enc, _) =
            S4EncState::init_enc_with(&params, ex.s0(), ex.mem0(), ex.c0()).unwrap();
        enc.enc_step(&params, &rule, EncInput::Bootstrap).unwrap();
        let mut got = Vec::new();
        for p in &plains {
            match enc.enc_step(&params, &rule, EncInput::Block(p.clone())).unwrap() {
                EncOutput::Block(c) => got.push(c),
                other => panic!("unexpected {other:?}"),
            }
        }
        match enc.enc_step(&params, &rule, EncInput::Stop).unwrap() {
            EncOutput::Final(c) => got.push(c),
            other => panic!("unexpected {other:?}"),
        }
        // Emitted stream is c(1)..c(11) = expected[0..=10].
        assert_eq!(got.len(), 11);
        assert_eq!(got, expected);
    }

    #[test]
    fn dec_first_two_blocks_ack() {
        let (_, params) = small_params(9);
        let rule = SwitchRule::TimeMod { ell: params.ell };
        let mut rng = DeterministicRng::new(90);
        let (enc, iv) = S4EncState::init_enc(&params, &mut rng);
        let (_, c0) = enc.icv();
        let mut dec = S4DecState::init_dec(&params, &iv, &mut rng).unwrap();
        assert_eq!(dec.dec_step(&params, &rule, &c0).unwrap(), DecOutput::Ack);
        assert_eq!(dec.dec_step(&params, &rule, &c0).unwrap(), DecOutput::Ack);
    }

    #[test]
    fn init_dec_rejects_wrong_length_iv() {
        let (_, params) = small_params(10);
        let bad = Iv::S4 {
            mem0: FieldVector::zero(params.q, params.m0 + 1),
            c0: FieldVector::zero(params.q, params.n),
        };
        let mut rng = DeterministicRng::new(100);
        assert!(S4DecState::init_dec(&params, &bad, &mut rng).is_err());
    }

    /// Run enc and dec over a full stream, returning the error trace e(t)
    /// indexed from t=1 and the recovered blocks ph(2..).
    fn run_pair(
        params: &S4Params,
        rule: &SwitchRule,
        s0: FieldVector,
        mem0: FieldVector,
        c0: FieldVector,
        s_hat1: FieldVector,
        plains: &[FieldVector],
    ) -> (Vec<FieldVector>, Vec<FieldVector>) {
        let (mut enc, iv) =
            S4EncState::init_enc_with(params, s0, mem0, c0.clone()).unwrap();
        enc.enc_step(params, rule, EncInput::Bootstrap).unwrap();
        let mut wire = Vec::new();
        let mut enc_states = vec![enc.state().clone()]; // s(1)
        for p in plains {
            match enc.enc_step(params, rule, EncInput::Block(p.clone())).unwrap() {
                EncOutput::Block(c) => wire.push(c),
                other => panic!("unexpected {other:?}"),
            }
            enc_states.push(enc.state().clone());
        }
        match enc.enc_step(params, rule, EncInput::Stop).unwrap() {
            EncOutput::Final(c) => wire.push(c),
            other => panic!("unexpected {other:?}"),
        }

        let mut dec = S4DecState::init_dec_with(params, &iv, s_hat1).unwrap();
        dec.dec_step(params, rule, &c0).unwrap(); // t=0
        let mut dec_states = Vec::new(); // sh(2), sh(3), ... after each consume
        let mut recovered = Vec::new();
        for c in &wire {
            match dec.dec_step(params, rule, c).unwrap() {
                DecOutput::Ack => {}
                DecOutput::Block(p) => recovered.push(p),
            }
            dec_states.push(dec.state().clone());
        }
        // e(t) = sh(t+1) - s(t): dec_states[k] = sh(k+2), enc_states[k] = s(k+1).
        let errs = enc_states
            .iter()
            .zip(dec_states.iter())
            .map(|(s, sh)| sh.sub(s).unwrap())
            .collect();
        (errs, recovered)
    }

    #[test]
    fn error_dynamics_law_holds_stepwise() {
        for seed in 0..10u64 {
            let mut rng = DeterministicRng::new(seed);
            let (_, _, params) = gen_params(128, 7, 3, 2, &mut rng).unwrap();
            let rule = SwitchRule::TimeMod { ell: 2 };
            let plains: Vec<FieldVector> =
                (0..8).map(|_| FieldVector::random(7, 3, &mut rng)).collect();
            let (errs, _) = run_pair(
                &params,
                &rule,
                FieldVector::random(7, 3, &mut rng),
                FieldVector::random(7, 3, &mut rng),
                FieldVector::random(7, 3, &mut rng),
                FieldVector::random(7, 3, &mut rng),
                &plains,
            );
            for t in 1..errs.len() {
                let expected =
                    mat_vec(&params.q_mats[switch_index(&rule, t as u64, None).unwrap() - 1], &errs[t - 1])
                        .unwrap();
                assert_eq!(errs[t], expected, "seed {seed}, step {t}");
            }
        }
    }

    #[test]
    fn round_trip_after_synchronization() {
        for seed in 0..20u64 {
            let mut rng = DeterministicRng::new(1000 + seed);
            let (_, _, params) = gen_params(128, 257, 4, 3, &mut rng).unwrap();
            let rule = SwitchRule::TimeMod { ell: 3 };
            let plains: Vec<FieldVector> =
                (0..12).map(|_| FieldVector::random(257, 4, &mut rng)).collect();
            let (errs, recovered) = run_pair(
                &params,
                &rule,
                FieldVector::random(257, 4, &mut rng),
                FieldVector::random(257, 4, &mut rng),
                FieldVector::random(257, 4, &mut rng),
                FieldVector::random(257, 4, &mut rng),
                &plains,
            );
            // Guaranteed from t = n0 + 1 for arbitrary initial states: the
            // error at time t carries a Q product of length t - 1.
            for (t, e) in errs.iter().enumerate().skip(params.n0 + 1) {
                assert!(e.is_zero(), "seed {seed}: e({}) nonzero", t + 1);
            }
            // recovered[k] = ph(k+2) equals p(k+1) = plains[k] once synced.
            for k in params.n0..recovered.len() {
                assert_eq!(recovered[k], plains[k], "seed {seed}, block {k}");
            }
        }
    }

    #[test]
    fn error_vector_zero_once_synchronized() {
        let ex = paper_example();
        let params = ex.params().unwrap();
        let rule = ex.rule();
        let (mut enc, iv) =
            S4EncState::init_enc_with(&params, ex.s0(), ex.mem0(), ex.c0()).unwrap();
        enc.enc_step(&params, &rule, EncInput::Bootstrap).unwrap();
        let mut dec = S4DecState::init_dec_with(&params, &iv, ex.receiver_state()).unwrap();
        dec.dec_step(&params, &rule, &ex.c0()).unwrap();
        // e(0) = receiver_state - s(0) for the worked example.
        let e0 = error_vector(&enc, &dec).unwrap();
        assert_eq!(e0, ex.receiver_state().sub(&ex.s0()).unwrap());
        // Co-progress the pair; the example is synchronized from t = 2.
        let mut rng = DeterministicRng::new(3);
        for t in 1..=5u64 {
            let p = FieldVector::random(7, 3, &mut rng);
            let c = match enc.enc_step(&params, &rule, EncInput::Block(p)).unwrap() {
                EncOutput::Block(c) => c,
                other => panic!("unexpected {other:?}"),
            };
            dec.dec_step(&params, &rule, &c).unwrap();
            let e = error_vector(&enc, &dec).unwrap();
            if t == 1 {
                assert_eq!(e, e0, "bootstrap copies keep e(1) = e(0)");
            } else {
                assert!(e.is_zero(), "e({t}) = {e:?}");
            }
        }
    }

    #[test]
    fn reconstruction_on_worked_example() {
        let ex = paper_example();
        let params = ex.params().unwrap();
        let rule = ex.rule();
        let (mut enc, _) =
            S4EncState::init_enc_with(&params, ex.s0(), ex.mem0(), ex.c0()).unwrap();
        enc.enc_step(&params, &rule, EncInput::Bootstrap).unwrap();
        let mem1 = enc.memory().clone();
        let mut rng = DeterministicRng::new(31);
        let mut wire = Vec::new();
        let mut states = vec![enc.state().clone()];
        for _ in 0..8 {
            let p = FieldVector::random(7, 3, &mut rng);
            match enc.enc_step(&params, &rule, EncInput::Block(p)).unwrap() {
                EncOutput::Block(c) => wire.push(c),
                other => panic!("unexpected {other:?}"),
            }
            states.push(enc.state().clone());
        }
        // t = 3 >= t_s = 2: the rebuilt state equals the live s(4).
        let rebuilt = reconstruct_state(&params, &rule, &wire, 1, &mem1, 3).unwrap();
        assert_eq!(rebuilt, states[3]);
    }

    #[test]
    fn error_vector_requires_aligned_clocks() {
        let (_, params) = small_params(11);
        let rule = SwitchRule::TimeMod { ell: params.ell };
        let mut rng = DeterministicRng::new(110);
        let (mut enc, iv) = S4EncState::init_enc(&params, &mut rng);
        let dec = S4DecState::init_dec(&params, &iv, &mut rng).unwrap();
        enc.enc_step(&params, &rule, EncInput::Bootstrap).unwrap();
        let p = FieldVector::zero(params.q, params.n);
        enc.enc_step(&params, &rule, EncInput::Block(p.clone())).unwrap();
        enc.enc_step(&params, &rule, EncInput::Block(p)).unwrap();
        // Transmitter took three steps, receiver consumed none.
        assert!(error_vector(&enc, &dec).is_err());
    }

    #[test]
    fn ciphertext_driven_switching_round_trips() {
        // Both sides must derive the same mode sequence from the shared
        // blocks alone: the transmitter from the block it emits, the
        // receiver from the block it consumed one step earlier.
        for seed in 0..10u64 {
            let mut rng = DeterministicRng::new(4000 + seed);
            let (_, _, params) = gen_params(128, 257, 4, 3, &mut rng).unwrap();
            let rule = SwitchRule::CiphertextDriven { ell: 3 };
            let plains: Vec<FieldVector> =
                (0..12).map(|_| FieldVector::random(257, 4, &mut rng)).collect();
            let (errs, recovered) = run_pair(
                &params,
                &rule,
                FieldVector::random(257, 4, &mut rng),
                FieldVector::random(257, 4, &mut rng),
                FieldVector::random(257, 4, &mut rng),
                FieldVector::random(257, 4, &mut rng),
                &plains,
            );
            for (t, e) in errs.iter().enumerate().skip(params.n0 + 1) {
                assert!(e.is_zero(), "seed {seed}: e({}) nonzero", t + 1);
            }
            for k in params.n0..recovered.len() {
                assert_eq!(recovered[k], plains[k], "seed {seed}, block {k}");
            }
        }
    }

    #[test]
    fn ciphertext_driven_reconstruction_matches() {
        let mut rng = DeterministicRng::new(4100);
        let (_, _, params) = gen_params(128, 257, 4, 3, &mut rng).unwrap();
        let rule = SwitchRule::CiphertextDriven { ell: 3 };
        let (mut enc, _) = S4EncState::init_enc(&params, &mut rng);
        enc.enc_step(&params, &rule, EncInput::Bootstrap).unwrap();
        let mem1 = enc.memory().clone();
        let mut wire = Vec::new();
        let mut states = vec![enc.state().clone()];
        for _ in 0..20 {
            let p = FieldVector::random(257, 4, &mut rng);
            match enc.enc_step(&params, &rule, EncInput::Block(p)).unwrap() {
                EncOutput::Block(c) => wire.push(c),
                other => panic!("unexpected {other:?}"),
            }
            states.push(enc.state().clone());
        }
        for t in params.n0 as u64..18 {
            let rebuilt = reconstruct_state(&params, &rule, &wire, 1, &mem1, t).unwrap();
            assert_eq!(rebuilt, states[t as usize], "t {t}");
        }
    }

    #[test]
    fn reconstruction_matches_live_state() {
        for seed in 0..10u64 {
            let mut rng = DeterministicRng::new(7000 + seed);
            let (_, _, params) = gen_params(128, 257, 4, 3, &mut rng).unwrap();
            let rule = SwitchRule::TimeMod { ell: 3 };
            let (mut enc, _) = S4EncState::init_enc(&params, &mut rng);
            enc.enc_step(&params, &rule, EncInput::Bootstrap).unwrap();
            let mut wire = Vec::new();
            let mut states = vec![enc.state().clone()];
            let mut mems = vec![enc.memory().clone()]; // m(1)
            for _ in 0..30 {
                let p = FieldVector::random(257, 4, &mut rng);
                match enc.enc_step(&params, &rule, EncInput::Block(p)).unwrap() {
                    EncOutput::Block(c) => wire.push(c),
                    other => panic!("unexpected {other:?}"),
                }
                states.push(enc.state().clone());
                mems.push(enc.memory().clone());
            }
            // wire[k] = c(k+1); states[k] = s(k+1); mems[k] = m(k+1).
            let t_s = params.n0 as u64;
            for t in t_s..28 {
                let rebuilt = reconstruct_state(
                    &params,
                    &rule,
                    &wire,
                    1,
                    &mems[0],
                    t,
                )
                .unwrap();
                assert_eq!(&rebuilt, &states[t as usize], "seed {seed}, t {t}");
            }
        }
    }

    #[test]
    fn reconstruction_rejects_early_times() {
        let mut rng = DeterministicRng::new(13);
        let (_, _, params) = gen_params(128, 7, 3, 2, &mut rng).unwrap();
        let rule = SwitchRule::TimeMod { ell: 2 };
        let blocks = vec![FieldVector::zero(7, 3); 10];
        let mem = FieldVector::zero(7, 3);
        let too_early = params.n0 as u64 - 1;
        assert!(reconstruct_state(&params, &rule, &blocks, 1, &mem, too_early).is_err());
    }
}
