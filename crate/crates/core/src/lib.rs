//! Draft-then-verify speculative decoding with pluggable draft-length
//! policies, built for desk-scale experiments on synthetic models.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is pure
//! computation; file formats, configuration and the command-line tool live
//! in the `svip-lab` crate.
//!
//! | module | contents |
//! |--------|----------|
//! | [`dist`] | categorical distributions, entropy, KL, TVD, residuals, sampling |
//! | [`rng`] | seedable, stream-splittable session generator |
//! | [`models`] | tabular, n-gram and tempered synthetic models |
//! | [`engine`] | verify / correct and the speculative decode loop |
//! | [`policies`] | constant, heuristic and entropy-threshold draft lengths |
//! | [`bounds`] | acceptance rate and its lower bounds |
//! | [`special`] | incomplete gamma and normal CDF |
//! | [`harness`] | oracle lengths, diagnostics, equivalence test, experiments |

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bounds;
pub mod dist;
pub mod engine;
pub mod harness;
pub mod models;
pub mod policies;
pub mod rng;
pub mod special;

pub use crate::dist::{Distribution, DistError, TokenId};
pub use crate::engine::{DecodeMode, DecodeResult, EngineError, RoundRecord, StopReason};
pub use crate::models::{AutoregressiveModel, NGramModel, TabularModel, TemperedDraft};
pub use crate::policies::{LengthPolicy, PolicySpec, SvipConfig, DEFAULT_MAX_DRAFT_LEN};
pub use crate::rng::SessionRng;
