//! Left-or-right blockwise adaptive encryption oracles, the evaluation
//! experiment, advantage estimation and the permutation-swap harness.
//!
//! An experiment hides a bit b, hands the adversary one or two oracles (an
//! encryption oracle and a synchronized-encryption oracle built on the
//! receiver update), and answers every query (p0, p1, session) with the
//! encryption of p_b in that session. Sessions keep independent histories
//! and interleave freely. The adversary's advantage is |2 Pr(success) - 1|,
//! estimated over independent trials with a fresh key per trial.

use crate::prp::{derive_element_permutation, gen_key, sample_uniform_permutation, SecretKey};
use crate::rng::{mix64, DeterministicRng, GOLDEN_GAMMA};
use crate::s4::{params_from_key, S4Scheme, SwitchRule};
use crate::scheme::{Block, Iv, PlainInput, Scheme, SchemeId, StepOutput};
use serde::Serialize;
use std::fmt;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OracleKind {
    E,
    Se,
}

impl fmt::Display for OracleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleKind::E => write!(f, "E"),
            OracleKind::Se => write!(f, "SE"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IvPolicy {
    Random,
    Chosen,
}

/// The six security models: IV policy times oracle availability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Model {
    RivE,
    IvE,
    RivSe,
    IvSe,
    RivMixed,
    /// Chosen IV with both oracles: the strongest model.
    IvMixed,
}

impl Model {
    pub const ALL: [Model; 6] = [
        Model::RivE,
        Model::IvE,
        Model::RivSe,
        Model::IvSe,
        Model::RivMixed,
        Model::IvMixed,
    ];

    pub fn iv_policy(self) -> IvPolicy {
        match self {
            Model::RivE | Model::RivSe | Model::RivMixed => IvPolicy::Random,
            Model::IvE | Model::IvSe | Model::IvMixed => IvPolicy::Chosen,
        }
    }

    pub fn allows(self, kind: OracleKind) -> bool {
        match self {
            Model::RivE | Model::IvE => kind == OracleKind::E,
            Model::RivSe | Model::IvSe => kind == OracleKind::Se,
            Model::RivMixed | Model::IvMixed => true,
        }
    }

    pub fn mixed(self) -> bool {
        matches!(self, Model::RivMixed | Model::IvMixed)
    }

    /// Shell-safe flag names used by the command line and reports.
    pub fn name(self) -> &'static str {
        match self {
            Model::RivE => "riv-e",
            Model::IvE => "iv-e",
            Model::RivSe => "riv-se",
            Model::IvSe => "iv-se",
            Model::RivMixed => "riv-mixed",
            Model::IvMixed => "iv-mixed",
        }
    }

    /// Rendering that matches the security table column heads.
    pub fn column(self) -> &'static str {
        match self {
            Model::RivE => "($IV,E)",
            Model::IvE => "(IV,E)",
            Model::RivSe => "($IV,SE)",
            Model::IvSe => "(IV,SE)",
            Model::RivMixed => "($IV,E&SE)",
            Model::IvMixed => "(IV,E&SE)",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleError {
    ModelForbidsOracle(OracleKind),
    ChosenIvUnderRandomPolicy,
    MissingChosenIv,
    BadIv,
    UnknownSession(usize),
    SessionClosed(usize),
    QueryShapeMismatch,
    BudgetExceeded,
    Scheme(String),
    Abstain,
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::ModelForbidsOracle(k) => write!(f, "model does not provide a {k} oracle"),
            OracleError::ChosenIvUnderRandomPolicy => {
                write!(f, "chosen IV supplied under a random-IV policy")
            }
            OracleError::MissingChosenIv => write!(f, "chosen-IV policy requires an IV"),
            OracleError::BadIv => write!(f, "IV does not fit the scheme"),
            OracleError::UnknownSession(i) => write!(f, "unknown session {i}"),
            OracleError::SessionClosed(i) => write!(f, "session {i} already stopped"),
            OracleError::QueryShapeMismatch => {
                write!(f, "query halves must be blocks of the same shape")
            }
            OracleError::BudgetExceeded => write!(f, "query budget exceeded"),
            OracleError::Scheme(s) => write!(f, "scheme error: {s}"),
            OracleError::Abstain => write!(f, "adversary abstained"),
        }
    }
}

impl std::error::Error for OracleError {}

/// Default hard cap on oracle interactions per trial.
pub const DEFAULT_QUERY_BUDGET: usize = 10_000;

/// A collision observed by an adversary: two transcript positions whose
/// answers the detection predicate compared equal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollisionEvent {
    pub oracle_a: OracleKind,
    pub session_a: usize,
    pub tau_a: usize,
    pub oracle_b: OracleKind,
    pub session_b: usize,
    pub tau_b: usize,
    pub left: Block,
    pub right: Block,
}

impl CollisionEvent {
    /// Replay the defining predicate.
    pub fn holds(&self) -> bool {
        self.left == self.right
    }
}

enum SessionKernel {
    Enc(Box<dyn crate::scheme::EncSession>),
    Se(Box<dyn crate::scheme::SeSession>),
}

struct SessionSlot {
    kind: OracleKind,
    kernel: SessionKernel,
    iv: Iv,
    /// Every block the session has emitted, init block included.
    transcript: Vec<Block>,
    closed: bool,
}

/// One trial's oracle environment: the keyed scheme, the hidden bit, and the
/// per-session histories.
pub struct OracleEnv {
    scheme: Box<dyn Scheme>,
    model: Model,
    b: u8,
    budget: usize,
    used: usize,
    sessions: Vec<SessionSlot>,
    rng: DeterministicRng,
    collisions: Vec<CollisionEvent>,
}

impl OracleEnv {
    pub fn new(scheme: Box<dyn Scheme>, model: Model, b: u8, budget: usize, rng: DeterministicRng) -> Self {
        Self {
            scheme,
            model,
            b,
            budget,
            used: 0,
            sessions: Vec::new(),
            rng,
            collisions: Vec::new(),
        }
    }

    pub fn model(&self) -> Model {
        self.model
    }

    pub fn scheme(&self) -> &dyn Scheme {
        self.scheme.as_ref()
    }

    fn charge(&mut self) -> Result<(), OracleError> {
        if self.used >= self.budget {
            return Err(OracleError::BudgetExceeded);
        }
        self.used += 1;
        Ok(())
    }

    /// Start a session. Under the chosen-IV policy the caller supplies the
    /// IV; under the random policy the oracle draws it and reports it back.
    /// Hidden initializations are drawn fresh either way.
    pub fn open_session(
        &mut self,
        kind: OracleKind,
        chosen_iv: Option<Iv>,
    ) -> Result<(usize, Iv), OracleError> {
        if !self.model.allows(kind) {
            return Err(OracleError::ModelForbidsOracle(kind));
        }
        self.charge()?;
        let iv = match (self.model.iv_policy(), chosen_iv) {
            (IvPolicy::Random, None) => self.scheme.random_iv(&mut self.rng),
            (IvPolicy::Random, Some(_)) => return Err(OracleError::ChosenIvUnderRandomPolicy),
            (IvPolicy::Chosen, Some(iv)) => {
                if !self.scheme.accepts_iv(&iv) {
                    return Err(OracleError::BadIv);
                }
                iv
            }
            (IvPolicy::Chosen, None) => return Err(OracleError::MissingChosenIv),
        };
        let (kernel, transcript) = match kind {
            OracleKind::E => {
                let s = self
                    .scheme
                    .new_enc(&iv, &mut self.rng)
                    .map_err(|e| OracleError::Scheme(e.to_string()))?;
                (SessionKernel::Enc(s), Vec::new())
            }
            OracleKind::Se => {
                let s = self
                    .scheme
                    .new_se(&iv, &mut self.rng)
                    .map_err(|e| OracleError::Scheme(e.to_string()))?;
                let transcript = s.init_block().into_iter().collect();
                (SessionKernel::Se(s), transcript)
            }
        };
        let id = self.sessions.len();
        self.sessions.push(SessionSlot { kind, kernel, iv: iv.clone(), transcript, closed: false });
        Ok((id, iv))
    }

    fn slot(&mut self, sid: usize) -> Result<&mut SessionSlot, OracleError> {
        self.sessions.get_mut(sid).ok_or(OracleError::UnknownSession(sid))
    }

    /// Left-or-right encryption query.
    pub fn query(&mut self, sid: usize, p0: &Block, p1: &Block) -> Result<StepOutput, OracleError> {
        self.charge()?;
        if !self.scheme.block_fits(p0) || !self.scheme.block_fits(p1) {
            return Err(OracleError::QueryShapeMismatch);
        }
        let b = self.b;
        let slot = self.slot(sid)?;
        if slot.closed {
            return Err(OracleError::SessionClosed(sid));
        }
        let chosen = if b == 0 { p0.clone() } else { p1.clone() };
        let out = match &mut slot.kernel {
            SessionKernel::Enc(s) => s.step(PlainInput::Block(chosen)),
            SessionKernel::Se(s) => s.step(PlainInput::Block(chosen)),
        }
        .map_err(|e| OracleError::Scheme(e.to_string()))?;
        if let StepOutput::Block(c) = &out {
            slot.transcript.push(c.clone());
        }
        Ok(out)
    }

    /// The (stop, stop) query.
    pub fn query_stop(&mut self, sid: usize) -> Result<StepOutput, OracleError> {
        self.charge()?;
        let slot = self.slot(sid)?;
        if slot.closed {
            return Err(OracleError::SessionClosed(sid));
        }
        let out = match &mut slot.kernel {
            SessionKernel::Enc(s) => s.step(PlainInput::Stop),
            SessionKernel::Se(s) => s.step(PlainInput::Stop),
        }
        .map_err(|e| OracleError::Scheme(e.to_string()))?;
        slot.closed = true;
        if let StepOutput::Block(c) = &out {
            slot.transcript.push(c.clone());
        }
        Ok(out)
    }

    /// Full emission history of a session, init block included.
    pub fn transcript(&self, sid: usize) -> &[Block] {
        &self.sessions[sid].transcript
    }

    pub fn session_iv(&self, sid: usize) -> &Iv {
        &self.sessions[sid].iv
    }

    pub fn session_kind(&self, sid: usize) -> OracleKind {
        self.sessions[sid].kind
    }

    pub fn record_collision(&mut self, ev: CollisionEvent) {
        self.collisions.push(ev);
    }

    pub fn collisions(&self) -> &[CollisionEvent] {
        &self.collisions
    }

    /// Adversary-side coin flips, separated from oracle randomness.
    pub fn hidden_bit_for_tests(&self) -> u8 {
        self.b
    }
}

/// A left-or-right adversary: runs against the environment and guesses b.
/// Returning `Err(Abstain)` counts as a fair coin.
pub trait Adversary: Sync {
    fn name(&self) -> &str;
    fn run(&self, env: &mut OracleEnv, rng: &mut DeterministicRng) -> Result<u8, OracleError>;
}

/// Guesses by coin flip without querying; the baseline.
pub struct CoinFlip;

impl Adversary for CoinFlip {
    fn name(&self) -> &str {
        "coin-flip"
    }

    fn run(&self, _env: &mut OracleEnv, rng: &mut DeterministicRng) -> Result<u8, OracleError> {
        Ok(u8::from(rng.next_bool()))
    }
}

/// Builds a fresh keyed scheme for one trial.
pub trait SchemeFactory: Sync {
    fn scheme_id(&self) -> SchemeId;
    fn build(&self, rng: &mut DeterministicRng) -> Box<dyn Scheme>;
}

/// One trial's result. Abstentions are kept distinct so estimators can
/// account them as exactly one half.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalOutcome {
    Win,
    Lose,
    Abstain,
}

/// One experiment evaluation with a caller-fixed hidden bit.
pub fn eval_with_bit(
    adv: &dyn Adversary,
    factory: &dyn SchemeFactory,
    model: Model,
    budget: usize,
    b: u8,
    rng: &mut DeterministicRng,
) -> (EvalOutcome, Vec<CollisionEvent>) {
    let mut scheme_rng = rng.derive(b"scheme");
    let oracle_rng = rng.derive(b"oracle");
    let mut adv_rng = rng.derive(b"adversary");
    let scheme = factory.build(&mut scheme_rng);
    let mut env = OracleEnv::new(scheme, model, b, budget, oracle_rng);
    let outcome = match adv.run(&mut env, &mut adv_rng) {
        Ok(g) if g == b => EvalOutcome::Win,
        Ok(_) => EvalOutcome::Lose,
        Err(OracleError::Abstain) => EvalOutcome::Abstain,
        // Budget exhaustion and other failures count as losses.
        Err(_) => EvalOutcome::Lose,
    };
    (outcome, env.collisions)
}

/// One experiment evaluation: draw b, wire the oracles, run the adversary.
/// Returns the success indicator and any logged collisions.
pub fn eval(
    adv: &dyn Adversary,
    factory: &dyn SchemeFactory,
    model: Model,
    budget: usize,
    rng: &mut DeterministicRng,
) -> (bool, Vec<CollisionEvent>) {
    let b = u8::from(rng.next_bool());
    let (outcome, collisions) = eval_with_bit(adv, factory, model, budget, b, rng);
    let success = match outcome {
        EvalOutcome::Win => true,
        EvalOutcome::Lose => false,
        // An abstaining adversary succeeds with probability exactly 1/2.
        EvalOutcome::Abstain => rng.next_bool(),
    };
    (success, collisions)
}

/// Wilson score interval at confidence z for a binomial proportion.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = (z / denom) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Experiment summary; serializes to the JSON-lines report schema.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub adversary: String,
    pub scheme: SchemeId,
    pub model: String,
    pub trials: usize,
    pub successes: usize,
    pub advantage: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    #[serde(skip)]
    pub collision_count: usize,
    #[serde(skip)]
    pub sample_collisions: Vec<CollisionEvent>,
}

impl ExperimentReport {
    fn from_counts(
        adversary: &str,
        scheme: SchemeId,
        model: Model,
        trials: usize,
        successes: usize,
        collision_count: usize,
        sample_collisions: Vec<CollisionEvent>,
    ) -> Self {
        let p = successes as f64 / trials.max(1) as f64;
        let advantage = (2.0 * p - 1.0).abs();
        let (p_lo, p_hi) = wilson_interval(successes, trials, 1.96);
        let ci_low = if p_lo > 0.5 {
            2.0 * (p_lo - 0.5)
        } else if p_hi < 0.5 {
            2.0 * (0.5 - p_hi)
        } else {
            0.0
        };
        let ci_high = (2.0 * p_lo - 1.0).abs().max((2.0 * p_hi - 1.0).abs());
        Self {
            adversary: adversary.to_string(),
            scheme,
            model: model.name().to_string(),
            trials,
            successes,
            advantage,
            ci_low,
            ci_high,
            collision_count,
            sample_collisions,
        }
    }
}

fn trial_seed(base: u64, index: usize) -> u64 {
    mix64(base ^ (index as u64).wrapping_mul(GOLDEN_GAMMA))
}

/// Independent evaluations with per-trial keys and randomness; trials split
/// across `jobs` threads, deterministically in `seed` regardless of the
/// thread count. The hidden bit alternates across trials (a balanced
/// design), and abstentions tally as one half, so a zero-information
/// adversary reads an advantage of almost exactly zero.
pub fn estimate_advantage(
    adv: &dyn Adversary,
    factory: &dyn SchemeFactory,
    model: Model,
    trials: usize,
    seed: u64,
    jobs: usize,
) -> ExperimentReport {
    assert!(trials >= 1);
    let jobs = jobs.max(1).min(trials);
    let run_range = |lo: usize, hi: usize| {
        let mut wins = 0usize;
        let mut abstains = 0usize;
        let mut collision_count = 0usize;
        let mut sample = Vec::new();
        for i in lo..hi {
            let mut rng = DeterministicRng::new(trial_seed(seed, i));
            let b = (i % 2) as u8;
            let (outcome, mut cols) =
                eval_with_bit(adv, factory, model, DEFAULT_QUERY_BUDGET, b, &mut rng);
            match outcome {
                EvalOutcome::Win => wins += 1,
                EvalOutcome::Lose => {}
                EvalOutcome::Abstain => abstains += 1,
            }
            collision_count += cols.len();
            if sample.len() < 8 {
                sample.append(&mut cols);
            }
        }
        (wins, abstains, collision_count, sample)
    };
    let mut wins = 0usize;
    let mut abstains = 0usize;
    let mut collision_count = 0usize;
    let mut sample = Vec::new();
    if jobs == 1 {
        let (w, a, c, s) = run_range(0, trials);
        wins = w;
        abstains = a;
        collision_count = c;
        sample = s;
    } else {
        let chunk = trials.div_ceil(jobs);
        let results: Vec<(usize, usize, usize, Vec<CollisionEvent>)> =
            std::thread::scope(|scope| {
                let mut handles = Vec::new();
                for w in 0..jobs {
                    let lo = w * chunk;
                    let hi = ((w + 1) * chunk).min(trials);
                    if lo >= hi {
                        break;
                    }
                    let run_range = &run_range;
                    handles.push(scope.spawn(move || run_range(lo, hi)));
                }
                handles.into_iter().map(|h| h.join().expect("trial worker panicked")).collect()
            });
        for (w, a, c, mut sm) in results {
            wins += w;
            abstains += a;
            collision_count += c;
            if sample.len() < 8 {
                sample.append(&mut sm);
            }
        }
    }
    let successes = wins + abstains / 2;
    ExperimentReport::from_counts(
        adv.name(),
        factory.scheme_id(),
        model,
        trials,
        successes,
        collision_count,
        sample,
    )
}

// ---------------------------------------------------------------------------
// Permutation-swap harness
// ---------------------------------------------------------------------------

/// Parameters for the swap experiment on the switched cipher.
#[derive(Debug, Clone)]
pub struct SwapConfig {
    pub k_bits: usize,
    pub q: u64,
    pub n: usize,
    pub ell: usize,
    pub rule: SwitchRule,
}

impl Default for SwapConfig {
    fn default() -> Self {
        Self { k_bits: 128, q: 257, n: 4, ell: 2, rule: SwitchRule::TimeMod { ell: 2 } }
    }
}

/// Report of a distinguishing experiment between the keyed-permutation and
/// uniform-permutation instantiations.
#[derive(Debug, Clone, Serialize)]
pub struct SwapReport {
    pub distinguisher: String,
    pub trials: usize,
    pub ones_keyed: usize,
    pub trials_keyed: usize,
    pub ones_uniform: usize,
    pub trials_uniform: usize,
    /// |Pr(output 1 | keyed) - Pr(output 1 | uniform)|
    pub advantage: f64,
}

/// Something that, given the full oracle wiring of one arm, outputs a bit
/// (or no decision). The swap harness measures how well the bit tracks the
/// hidden arm.
pub trait SwapDistinguisher: Sync {
    fn name(&self) -> &str;
    /// `env` runs the cipher with the arm's permutation; `context` exposes
    /// test-only data (the key and the live permutation tables).
    fn distinguish(
        &self,
        env: &mut OracleEnv,
        context: &SwapContext,
        rng: &mut DeterministicRng,
    ) -> Option<u8>;
}

/// Test-only visibility into one swap-experiment arm.
pub struct SwapContext {
    pub key: SecretKey,
    pub q: u64,
    pub live_table: Vec<u32>,
}

/// A left-or-right adversary lifted into the swap game: the distinguisher
/// runs the adversary through the left-or-right subroutine and outputs 1
/// exactly when the adversary wins.
pub struct LrSubroutine<'a> {
    pub adversary: &'a dyn Adversary,
}

impl SwapDistinguisher for LrSubroutine<'_> {
    fn name(&self) -> &str {
        self.adversary.name()
    }

    fn distinguish(
        &self,
        env: &mut OracleEnv,
        _context: &SwapContext,
        rng: &mut DeterministicRng,
    ) -> Option<u8> {
        let b = env.hidden_bit_for_tests();
        match self.adversary.run(env, rng) {
            Ok(guess) => Some(u8::from(guess == b)),
            Err(OracleError::Abstain) => None,
            Err(_) => Some(0),
        }
    }
}

/// Sanity backdoor: recomputes the keyed table and compares it to the live
/// one. Separates the arms perfectly when the wiring is correct.
pub struct TableAccessDistinguisher;

impl SwapDistinguisher for TableAccessDistinguisher {
    fn name(&self) -> &str {
        "table-access-backdoor"
    }

    fn distinguish(
        &self,
        _env: &mut OracleEnv,
        context: &SwapContext,
        _rng: &mut DeterministicRng,
    ) -> Option<u8> {
        let keyed = derive_element_permutation(&context.key, context.q, b"perm")
            .expect("q fits table mode");
        Some(u8::from(keyed.forward_table() == context.live_table.as_slice()))
    }
}

/// Run the full swap wiring: a hidden coin picks the keyed or the uniform
/// permutation, the cipher is instantiated with it, and the distinguisher
/// interacts through the left-or-right oracles. The inner left-or-right bit
/// alternates within each arm and undecided outputs alternate as well, so
/// arm proportions carry no mixture noise.
pub fn prp_swap_experiment(
    d: &dyn SwapDistinguisher,
    model: Model,
    cfg: &SwapConfig,
    trials: usize,
    seed: u64,
) -> SwapReport {
    let mut ones_keyed = 0usize;
    let mut trials_keyed = 0usize;
    let mut ones_uniform = 0usize;
    let mut trials_uniform = 0usize;
    let mut undecided_toggle = [false; 2];
    for i in 0..trials {
        let mut rng = DeterministicRng::new(trial_seed(seed ^ 0x5A9, i));
        let keyed_arm = rng.next_bool();
        let key = gen_key(cfg.k_bits, &mut rng).expect("valid key length");
        let seed_public = rng.next_u64();
        let mut params = params_from_key(&key, cfg.q, cfg.n, cfg.ell, seed_public)
            .expect("valid swap parameters");
        if !keyed_arm {
            let mut perm_rng = rng.derive(b"uniform-perm");
            params.perm = sample_uniform_permutation(cfg.q, &mut perm_rng)
                .expect("q fits table mode");
        }
        let context = SwapContext {
            key,
            q: cfg.q,
            live_table: params.perm.forward_table().to_vec(),
        };
        let arm_trials = if keyed_arm { trials_keyed } else { trials_uniform };
        let b = (arm_trials % 2) as u8;
        let oracle_rng = rng.derive(b"oracle");
        let mut adv_rng = rng.derive(b"adversary");
        let scheme = Box::new(S4Scheme::new(Arc::new(params), cfg.rule));
        let mut env = OracleEnv::new(scheme, model, b, DEFAULT_QUERY_BUDGET, oracle_rng);
        let out = match d.distinguish(&mut env, &context, &mut adv_rng) {
            Some(bit) => bit,
            None => {
                let arm = usize::from(keyed_arm);
                undecided_toggle[arm] = !undecided_toggle[arm];
                u8::from(undecided_toggle[arm])
            }
        };
        if keyed_arm {
            trials_keyed += 1;
            ones_keyed += usize::from(out == 1);
        } else {
            trials_uniform += 1;
            ones_uniform += usize::from(out == 1);
        }
    }
    let p1 = ones_keyed as f64 / trials_keyed.max(1) as f64;
    let p0 = ones_uniform as f64 / trials_uniform.max(1) as f64;
    SwapReport {
        distinguisher: d.name().to_string(),
        trials,
        ones_keyed,
        trials_keyed,
        ones_uniform,
        trials_uniform,
        advantage: (p1 - p0).abs(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modes::{make_mode, ModeConfig};
    use crate::scheme::SchemeId;

    pub(crate) struct ModeFactory {
        pub id: SchemeId,
        pub cfg: ModeConfig,
    }

    impl SchemeFactory for ModeFactory {
        fn scheme_id(&self) -> SchemeId {
            self.id
        }

        fn build(&self, rng: &mut DeterministicRng) -> Box<dyn Scheme> {
            let key = gen_key(128, rng).expect("valid key length");
            Box::new(make_mode(self.id, &key, &self.cfg, rng).expect("mode builds"))
        }
    }

    fn cfb_env(b: u8, seed: u64) -> OracleEnv {
        let mut rng = DeterministicRng::new(seed);
        let key = gen_key(128, &mut rng).unwrap();
        let scheme =
            Box::new(make_mode(SchemeId::Cfb, &key, &ModeConfig::default(), &mut rng).unwrap());
        OracleEnv::new(scheme, Model::RivMixed, b, DEFAULT_QUERY_BUDGET, rng)
    }

    #[test]
    fn equal_queries_are_b_blind() {
        // Same key, oracle randomness and query stream: the transcripts must
        // be bit-identical under b = 0 and b = 1 when p0 = p1 throughout,
        // for every scheme under both oracle kinds.
        for id in SchemeId::ALL {
            for kind in [OracleKind::E, OracleKind::Se] {
                let run = |b: u8| {
                    let mut rng = DeterministicRng::new(42 + id as u64);
                    let scheme: Box<dyn Scheme> = if id == SchemeId::S4 {
                        let (_, _, params) =
                            crate::s4::gen_params(128, 257, 4, 2, &mut rng).expect("params");
                        Box::new(crate::s4::S4Scheme::new(
                            std::sync::Arc::new(params),
                            crate::s4::SwitchRule::TimeMod { ell: 2 },
                        ))
                    } else {
                        let key = gen_key(128, &mut rng).unwrap();
                        Box::new(make_mode(id, &key, &ModeConfig::default(), &mut rng).unwrap())
                    };
                    let mut env =
                        OracleEnv::new(scheme, Model::RivMixed, b, DEFAULT_QUERY_BUDGET, rng);
                    let (sid, _) = env.open_session(kind, None).unwrap();
                    let mut out = Vec::new();
                    let mut qrng = DeterministicRng::new(7);
                    for _ in 0..10 {
                        let p = env.scheme().random_block(&mut qrng);
                        out.push(env.query(sid, &p, &p).unwrap());
                    }
                    out
                };
                assert_eq!(run(0), run(1), "{id} under {kind}");
            }
        }
    }

    #[test]
    fn session_isolation_under_interleaving() {
        // Transcript of session 0 must not depend on activity in session 1.
        let quiet = {
            let mut env = cfb_env(0, 99);
            let (sid, _) = env.open_session(OracleKind::E, None).unwrap();
            let mut rng = DeterministicRng::new(1);
            for _ in 0..6 {
                let p = env.scheme().random_block(&mut rng);
                env.query(sid, &p, &p).unwrap();
            }
            env.transcript(sid).to_vec()
        };
        let noisy = {
            let mut env = cfb_env(0, 99);
            let (sid, _) = env.open_session(OracleKind::E, None).unwrap();
            let (other, _) = env.open_session(OracleKind::Se, None).unwrap();
            let mut rng = DeterministicRng::new(1);
            let mut noise_rng = DeterministicRng::new(2);
            for _ in 0..6 {
                let p = env.scheme().random_block(&mut rng);
                env.query(sid, &p, &p).unwrap();
                let noise = env.scheme().random_block(&mut noise_rng);
                env.query(other, &noise, &noise).unwrap();
            }
            env.transcript(sid).to_vec()
        };
        // Session randomness is drawn at open time, so opening the second
        // session after the first leaves the first one's stream unchanged.
        assert_eq!(quiet, noisy);
    }

    #[test]
    fn cfb_e_and_se_transcripts_identical() {
        let iv = Iv::Bits(0x1b2b);
        // Chosen-IV mixed-oracle environment so both kinds share one IV.
        let mut rng = DeterministicRng::new(7);
        let key = gen_key(128, &mut rng).unwrap();
        let scheme =
            Box::new(make_mode(SchemeId::Cfb, &key, &ModeConfig::default(), &mut rng).unwrap());
        let mut env = OracleEnv::new(scheme, Model::IvMixed, 0, DEFAULT_QUERY_BUDGET, rng);
        let (se, _) = env.open_session(OracleKind::Se, Some(iv.clone())).unwrap();
        let (e, _) = env.open_session(OracleKind::E, Some(iv)).unwrap();
        let mut rng = DeterministicRng::new(8);
        for _ in 0..10 {
            let p = env.scheme().random_block(&mut rng);
            let a = env.query(e, &p, &p).unwrap();
            let b = env.query(se, &p, &p).unwrap();
            assert_eq!(a, b);
        }
        assert_eq!(env.transcript(e), env.transcript(se));
    }

    #[test]
    fn chosen_iv_rejected_under_random_policy() {
        let mut env = cfb_env(0, 12);
        let err = env.open_session(OracleKind::E, Some(Iv::Bits(3))).unwrap_err();
        assert_eq!(err, OracleError::ChosenIvUnderRandomPolicy);
    }

    #[test]
    fn model_gates_oracle_kinds() {
        let mut rng = DeterministicRng::new(13);
        let key = gen_key(128, &mut rng).unwrap();
        let scheme =
            Box::new(make_mode(SchemeId::Cbc, &key, &ModeConfig::default(), &mut rng).unwrap());
        let mut env = OracleEnv::new(scheme, Model::RivE, 0, DEFAULT_QUERY_BUDGET, rng);
        assert!(env.open_session(OracleKind::Se, None).is_err());
        assert!(env.open_session(OracleKind::E, None).is_ok());
    }

    #[test]
    fn budget_cap_enforced() {
        let mut rng = DeterministicRng::new(14);
        let key = gen_key(128, &mut rng).unwrap();
        let scheme =
            Box::new(make_mode(SchemeId::Cbc, &key, &ModeConfig::default(), &mut rng).unwrap());
        let mut env = OracleEnv::new(scheme, Model::RivE, 0, 5, rng);
        let (sid, _) = env.open_session(OracleKind::E, None).unwrap();
        let p = Block::Bits(1);
        for _ in 0..4 {
            env.query(sid, &p, &p).unwrap();
        }
        assert_eq!(env.query(sid, &p, &p).unwrap_err(), OracleError::BudgetExceeded);
    }

    #[test]
    fn two_chosen_iv_sessions_share_iv_with_independent_states() {
        let mut rng = DeterministicRng::new(15);
        let key = gen_key(128, &mut rng).unwrap();
        let scheme =
            Box::new(make_mode(SchemeId::Mdcbc, &key, &ModeConfig::default(), &mut rng).unwrap());
        let mut env = OracleEnv::new(scheme, Model::IvSe, 0, DEFAULT_QUERY_BUDGET, rng);
        let iv = Iv::Bits(0x0042);
        let (a, iv_a) = env.open_session(OracleKind::Se, Some(iv.clone())).unwrap();
        let (b, iv_b) = env.open_session(OracleKind::Se, Some(iv)).unwrap();
        assert_eq!(iv_a, iv_b);
        // Same IV, same query: hidden receiver states differ, so answers do.
        let p = Block::Bits(0x7);
        let ca = env.query(a, &p, &p).unwrap();
        let cb = env.query(b, &p, &p).unwrap();
        assert_ne!(ca, cb);
    }

    #[test]
    fn every_scheme_runs_under_both_oracle_kinds() {
        // The game loop is scheme-agnostic: all six schemes serve E and SE
        // sessions through the same code path.
        for id in SchemeId::ALL {
            let mut rng = DeterministicRng::new(0xA11 + id as u64);
            let scheme: Box<dyn Scheme> = if id == SchemeId::S4 {
                let (_, _, params) =
                    crate::s4::gen_params(128, 257, 4, 2, &mut rng).expect("params");
                Box::new(crate::s4::S4Scheme::new(
                    std::sync::Arc::new(params),
                    crate::s4::SwitchRule::TimeMod { ell: 2 },
                ))
            } else {
                let key = gen_key(128, &mut rng).unwrap();
                Box::new(make_mode(id, &key, &ModeConfig::default(), &mut rng).unwrap())
            };
            let mut env = OracleEnv::new(scheme, Model::RivMixed, 1, DEFAULT_QUERY_BUDGET, rng);
            let (e, _) = env.open_session(OracleKind::E, None).unwrap();
            let (se, _) = env.open_session(OracleKind::Se, None).unwrap();
            let mut qrng = DeterministicRng::new(7);
            for _ in 0..3 {
                let p = env.scheme().random_block(&mut qrng);
                env.query(e, &p, &p).unwrap();
                env.query(se, &p, &p).unwrap();
            }
        }
    }

    #[test]
    fn delayed_se_session_emits_iv_block_at_open() {
        let mut rng = DeterministicRng::new(21);
        let key = gen_key(128, &mut rng).unwrap();
        let scheme =
            Box::new(make_mode(SchemeId::Dcbc, &key, &ModeConfig::default(), &mut rng).unwrap());
        let mut env = OracleEnv::new(scheme, Model::IvSe, 0, DEFAULT_QUERY_BUDGET, rng);
        let (sid, iv) = env.open_session(OracleKind::Se, Some(Iv::Bits(0x77))).unwrap();
        // The session's first emitted block is the IV echo c(1) = IV.
        assert_eq!(env.transcript(sid), &[Block::Bits(0x77)]);
        assert_eq!(iv, Iv::Bits(0x77));
        // The first plaintext query is answered immediately with c(2).
        let p = Block::Bits(0x3);
        let ans = env.query(sid, &p, &p).unwrap();
        assert!(matches!(ans, StepOutput::Block(_)));
    }

    struct AlwaysAbstain;

    impl Adversary for AlwaysAbstain {
        fn name(&self) -> &str {
            "always-abstain"
        }

        fn run(&self, _env: &mut OracleEnv, _rng: &mut DeterministicRng) -> Result<u8, OracleError> {
            Err(OracleError::Abstain)
        }
    }

    #[test]
    fn abstention_contributes_exactly_one_half() {
        let factory = ModeFactory { id: SchemeId::Cbc, cfg: ModeConfig::default() };
        let report = estimate_advantage(&AlwaysAbstain, &factory, Model::RivE, 400, 77, 2);
        assert_eq!(report.successes, 200);
        assert_eq!(report.advantage, 0.0);
    }

    #[test]
    fn coin_flip_advantage_is_small() {
        let factory = ModeFactory { id: SchemeId::Cbc, cfg: ModeConfig::default() };
        let report = estimate_advantage(&CoinFlip, &factory, Model::RivE, 400, 1234, 2);
        assert!(report.advantage <= 0.15, "advantage {}", report.advantage);
        assert!(report.ci_low <= 0.05, "ci_low {}", report.ci_low);
    }

    #[test]
    fn wilson_interval_shapes() {
        let (lo, hi) = wilson_interval(200, 400, 1.96);
        assert!(lo < 0.5 && hi > 0.5);
        let (lo, hi) = wilson_interval(400, 400, 1.96);
        assert!(lo > 0.98 && hi == 1.0);
    }

    #[test]
    fn estimator_deterministic_across_job_counts() {
        let factory = ModeFactory { id: SchemeId::Cfb, cfg: ModeConfig::default() };
        let a = estimate_advantage(&CoinFlip, &factory, Model::RivE, 100, 9, 1);
        let b = estimate_advantage(&CoinFlip, &factory, Model::RivE, 100, 9, 4);
        assert_eq!(a.successes, b.successes);
    }

    #[test]
    fn wilson_coverage_for_known_probabilities() {
        // Interval on the advantage should cover the true value in nearly
        // all repeated estimations: 0 for a coin flip, ~1 for the
        // deterministic chosen-IV collision.
        let factory = ModeFactory { id: SchemeId::Cbc, cfg: ModeConfig::default() };
        let reps = 60;
        let mut covered = 0;
        for r in 0..reps {
            let report = estimate_advantage(&CoinFlip, &factory, Model::RivE, 30, 5000 + r, 1);
            if report.ci_low <= 1e-9 {
                covered += 1;
            }
        }
        assert!(covered * 100 >= reps * 93, "coin flip covered only {covered}/{reps}");
        let collision = crate::attack::AttackName::FixedIvCollision.build();
        let mut covered = 0;
        for r in 0..reps {
            let report =
                estimate_advantage(collision.as_ref(), &factory, Model::IvE, 30, 6000 + r, 1);
            if report.ci_high >= 1.0 - 1e-9 {
                covered += 1;
            }
        }
        assert!(covered * 100 >= reps * 93, "collision covered only {covered}/{reps}");
    }

    #[test]
    fn swap_backdoor_separates_arms() {
        let report = prp_swap_experiment(
            &TableAccessDistinguisher,
            Model::IvMixed,
            &SwapConfig::default(),
            60,
            77,
        );
        assert!(report.advantage >= 0.9, "advantage {}", report.advantage);
    }

    #[test]
    fn swap_lr_subroutine_with_coin_flip_is_flat() {
        let report = prp_swap_experiment(
            &LrSubroutine { adversary: &CoinFlip },
            Model::IvMixed,
            &SwapConfig::default(),
            200,
            78,
        );
        assert!(report.advantage <= 0.2, "advantage {}", report.advantage);
    }
}
