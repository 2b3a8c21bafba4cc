//! A self-synchronizing stream cipher built from switched linear updates
//! over GF(q), the classic self-synchronizing block modes it is measured
//! against, and a left-or-right blockwise oracle harness with the concrete
//! distinguishing attacks for both.
//!
//! Everything is desk-scale and fully deterministic under explicit seeds:
//! the block cipher is a toy Feistel network and the keyed permutations are
//! table-based, chosen for reproducible cross-platform test vectors, not
//! for real-world strength. Do not protect data with this crate.
//!
//! Module map:
//!
//! * [`gf`] - exact GF(q) scalars, vectors, matrices, nilpotency checks.
//! * [`rng`] - the SplitMix64 generator everything draws from.
//! * [`prp`] - keys, table permutations of GF(q), the toy block cipher.
//! * [`scheme`] - the uniform scheme interface (enc/dec/synchronized-enc).
//! * [`s4`] - the switched cipher: parameters, kernels, state observer.
//! * [`modes`] - CBC, CFB, DCBC and the two modified modes.
//! * [`oracle`] - left-or-right oracles, experiments, the swap harness.
//! * [`attack`] - the concrete adversaries and the security-table runner.
//! * [`channel`] - corruption simulation and the worked example trace.
//! * [`frame`] - file encryption format.

pub mod attack;
pub mod channel;
pub mod frame;
pub mod gf;
pub mod modes;
pub mod oracle;
pub mod prp;
pub mod rng;
pub mod s4;
pub mod scheme;
