//! Draft-length policies.
//!
//! The engine drafts one token, then asks the policy whether to draft
//! another, handing it the entropy of the *next* draft distribution. A round
//! always proposes at least one token and never more than [`LengthPolicy::max_len`].

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on proposals per round unless configured otherwise.
pub const DEFAULT_MAX_DRAFT_LEN: usize = 40;
pub const DEFAULT_SVIP_THRESHOLD: f64 = 0.3;
pub const DEFAULT_CONSTANT_LEN: usize = 5;
pub const DEFAULT_HEURISTIC_INIT: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("invalid length {0}: must be at least 1")]
    InvalidLength(usize),
    #[error("initial length {init} outside [1, {cap}]")]
    InitOutOfRange { init: usize, cap: usize },
    #[error("invalid threshold {0}: must be finite and non-negative")]
    InvalidThreshold(f64),
    #[error("invalid scale {0}: must be positive")]
    InvalidScale(f64),
    #[error("invalid bound level {0}: must lie in [0, 1]")]
    InvalidBoundLevel(f64),
}

pub trait LengthPolicy {
    /// Hard cap on tokens proposed in one round.
    fn max_len(&self) -> usize;
    /// Consulted after each drafted token.
    fn should_continue(&mut self, tokens_this_round: usize, next_entropy: f64) -> bool;
    /// Called once when a round has been verified.
    fn on_round_end(&mut self, proposed: usize, accepted: usize, all_accepted: bool);
    /// Round length the policy currently targets, for policies that have one.
    fn target_length(&self) -> Option<usize> {
        None
    }
}

impl<P: LengthPolicy + ?Sized> LengthPolicy for Box<P> {
    fn max_len(&self) -> usize {
        (**self).max_len()
    }
    fn should_continue(&mut self, tokens_this_round: usize, next_entropy: f64) -> bool {
        (**self).should_continue(tokens_this_round, next_entropy)
    }
    fn on_round_end(&mut self, proposed: usize, accepted: usize, all_accepted: bool) {
        (**self).on_round_end(proposed, accepted, all_accepted)
    }
    fn target_length(&self) -> Option<usize> {
        (**self).target_length()
    }
}

/// Fixed round length `min(k, cap)`.
#[derive(Debug, Clone)]
pub struct ConstantPolicy {
    k: usize,
    cap: usize,
}

pub fn constant_policy(k: usize) -> Result<ConstantPolicy, PolicyError> {
    ConstantPolicy::with_cap(k, DEFAULT_MAX_DRAFT_LEN)
}

impl ConstantPolicy {
    pub fn with_cap(k: usize, cap: usize) -> Result<Self, PolicyError> {
        if k == 0 {
            return Err(PolicyError::InvalidLength(k));
        }
        if cap == 0 {
            return Err(PolicyError::InvalidLength(cap));
        }
        Ok(ConstantPolicy { k, cap })
    }
}

impl LengthPolicy for ConstantPolicy {
    fn max_len(&self) -> usize {
        self.cap
    }
    fn should_continue(&mut self, tokens_this_round: usize, _next_entropy: f64) -> bool {
        tokens_this_round < self.k.min(self.cap)
    }
    fn on_round_end(&mut self, _: usize, _: usize, _: bool) {}
    fn target_length(&self) -> Option<usize> {
        Some(self.k.min(self.cap))
    }
}

/// Grow by 2 after a fully accepted round, shrink by 1 otherwise, within `[1, cap]`.
#[derive(Debug, Clone)]
pub struct HeuristicPolicy {
    current: usize,
    cap: usize,
}

pub fn heuristic_policy(init: usize, cap: usize) -> Result<HeuristicPolicy, PolicyError> {
    if cap == 0 {
        return Err(PolicyError::InvalidLength(cap));
    }
    if init == 0 || init > cap {
        return Err(PolicyError::InitOutOfRange { init, cap });
    }
    Ok(HeuristicPolicy { current: init, cap })
}

/// One step of the heuristic length recurrence.
pub fn heuristic_next_length(current: usize, all_accepted: bool, cap: usize) -> usize {
    if all_accepted {
        (current + 2).min(cap)
    } else {
        current.saturating_sub(1).max(1)
    }
}

impl LengthPolicy for HeuristicPolicy {
    fn max_len(&self) -> usize {
        self.cap
    }
    fn should_continue(&mut self, tokens_this_round: usize, _next_entropy: f64) -> bool {
        tokens_this_round < self.current
    }
    fn on_round_end(&mut self, _proposed: usize, _accepted: usize, all_accepted: bool) {
        self.current = heuristic_next_length(self.current, all_accepted, self.cap);
    }
    fn target_length(&self) -> Option<usize> {
        Some(self.current)
    }
}

/// Entropy threshold rule: keep drafting while `sqrt(H_next) <= h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvipConfig {
    /// Threshold on the square root of the next-token draft entropy (nats).
    pub h: f64,
    pub max_len: usize,
}

impl Default for SvipConfig {
    fn default() -> Self {
        SvipConfig { h: DEFAULT_SVIP_THRESHOLD, max_len: DEFAULT_MAX_DRAFT_LEN }
    }
}

impl SvipConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.h >= 0.0 && self.h.is_finite()) {
            return Err(PolicyError::InvalidThreshold(self.h));
        }
        if self.max_len == 0 {
            return Err(PolicyError::InvalidLength(self.max_len));
        }
        Ok(())
    }

    /// True when a distribution with this entropy would end the round.
    pub fn stops_at(&self, entropy: f64) -> bool {
        libm::sqrt(entropy) > self.h
    }
}

#[derive(Debug, Clone)]
pub struct SvipPolicy {
    cfg: SvipConfig,
}

pub fn svip_policy(cfg: SvipConfig) -> Result<SvipPolicy, PolicyError> {
    cfg.validate()?;
    Ok(SvipPolicy { cfg })
}

impl SvipPolicy {
    pub fn config(&self) -> SvipConfig {
        self.cfg
    }
}

impl LengthPolicy for SvipPolicy {
    fn max_len(&self) -> usize {
        self.cfg.max_len
    }
    fn should_continue(&mut self, tokens_this_round: usize, next_entropy: f64) -> bool {
        tokens_this_round < self.cfg.max_len && !self.cfg.stops_at(next_entropy)
    }
    fn on_round_end(&mut self, _: usize, _: usize, _: bool) {}
}

/// Entropy threshold equivalent to stopping once the approximation bound
/// `1 - sqrt(c H)` drops below `bound_level`: `h = (1 - bound_level) / sqrt(c)`.
pub fn threshold_from_bound(bound_level: f64, c: f64) -> Result<f64, PolicyError> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(PolicyError::InvalidScale(c));
    }
    if !(0.0..=1.0).contains(&bound_level) {
        return Err(PolicyError::InvalidBoundLevel(bound_level));
    }
    Ok((1.0 - bound_level) / libm::sqrt(c))
}

fn default_cap() -> usize {
    DEFAULT_MAX_DRAFT_LEN
}
fn default_constant() -> usize {
    DEFAULT_CONSTANT_LEN
}
fn default_init() -> usize {
    DEFAULT_HEURISTIC_INIT
}
fn default_h() -> f64 {
    DEFAULT_SVIP_THRESHOLD
}

/// Serializable policy selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    Constant {
        #[serde(default = "default_constant")]
        k: usize,
        #[serde(default = "default_cap")]
        cap: usize,
    },
    Heuristic {
        #[serde(default = "default_init")]
        init: usize,
        #[serde(default = "default_cap")]
        cap: usize,
    },
    Svip {
        #[serde(default = "default_h")]
        h: f64,
        #[serde(default = "default_cap")]
        max_len: usize,
    },
}

impl PolicySpec {
    pub fn constant(k: usize) -> Self {
        PolicySpec::Constant { k, cap: DEFAULT_MAX_DRAFT_LEN }
    }
    pub fn heuristic() -> Self {
        PolicySpec::Heuristic { init: DEFAULT_HEURISTIC_INIT, cap: DEFAULT_MAX_DRAFT_LEN }
    }
    pub fn svip(h: f64) -> Self {
        PolicySpec::Svip { h, max_len: DEFAULT_MAX_DRAFT_LEN }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        self.build().map(|_| ())
    }

    pub fn build(&self) -> Result<Box<dyn LengthPolicy + Send>, PolicyError> {
        Ok(match *self {
            PolicySpec::Constant { k, cap } => Box::new(ConstantPolicy::with_cap(k, cap)?),
            PolicySpec::Heuristic { init, cap } => Box::new(heuristic_policy(init, cap)?),
            PolicySpec::Svip { h, max_len } => Box::new(svip_policy(SvipConfig { h, max_len })?),
        })
    }

    /// Short name used in file names and tables, e.g. `svip-0.3`.
    pub fn label(&self) -> String {
        match *self {
            PolicySpec::Constant { k, .. } => format!("constant-{k}"),
            PolicySpec::Heuristic { init, .. } => format!("heuristic-{init}"),
            PolicySpec::Svip { h, .. } => format!("svip-{h}"),
        }
    }
}
