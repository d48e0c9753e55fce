//! Experiments and diagnostics on top of the engine.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{argmax, kl_divergence, sample, Distribution, TokenId};
use crate::engine::{
    self, speculative_decode_with, verify_greedy, verify_sampling, DecodeMode, DecodeResult, EngineError, ResidualRule, RoundRecord,
    StopReason,
};
use crate::models::AutoregressiveModel;
use crate::policies::{heuristic_next_length, PolicyError, PolicySpec, SvipConfig, DEFAULT_MAX_DRAFT_LEN};
use crate::rng::SessionRng;

/// Largest `vocab^horizon` the equivalence test will enumerate.
pub const MAX_ENUMERATED_SEQUENCES: usize = 10_000;
pub const MIN_EQUIVALENCE_SAMPLES: usize = 10_000;
pub const DEFAULT_EQUIVALENCE_THRESHOLD: f64 = 0.01;
pub const DEFAULT_KL_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("state space too large: {vocab}^{horizon} sequences exceeds {limit}")]
    StateSpaceTooLarge { vocab: usize, horizon: usize, limit: usize },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> HarnessError {
    HarnessError::InvalidConfig { field, reason: reason.into() }
}

/// Relative costs in units of one target forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    #[serde(default = "default_r_draft")]
    pub r_draft: f64,
    #[serde(default)]
    pub c_verify_overhead: f64,
}

fn default_r_draft() -> f64 {
    0.1
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { r_draft: default_r_draft(), c_verify_overhead: 0.0 }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.r_draft > 0.0 && self.r_draft.is_finite()) {
            return Err(invalid("cost_model.r_draft", "must be positive"));
        }
        if !(self.c_verify_overhead >= 0.0 && self.c_verify_overhead.is_finite()) {
            return Err(invalid("cost_model.c_verify_overhead", "must be non-negative"));
        }
        Ok(())
    }

    /// `N / (D r_draft + R (1 + overhead))`.
    pub fn speedup(&self, generated: usize, draft_calls: usize, target_calls: usize) -> f64 {
        generated as f64 / (draft_calls as f64 * self.r_draft + target_calls as f64 * (1.0 + self.c_verify_overhead))
    }
}

/// Cost-model speedup over target-only decoding of the same tokens.
pub fn estimated_speedup(result: &DecodeResult, cm: &CostModel) -> f64 {
    cm.speedup(result.generated().len(), result.draft_forward_calls, result.target_forward_calls)
}

/// Drafts from `prefix`, verifying each token as it is drafted, and returns
/// how many are accepted before the first rejection (at most `cap`).
pub fn oracle_draft_length<T, D>(target: &T, draft: &D, prefix: &[TokenId], mode: DecodeMode, rng: &mut SessionRng, cap: usize) -> usize
where
    T: AutoregressiveModel + ?Sized,
    D: AutoregressiveModel + ?Sized,
{
    let mut ctx = prefix.to_vec();
    for j in 0..cap {
        let q = draft.next_distribution(&ctx);
        let p = target.next_distribution(&ctx);
        let (tok, ok) = match mode {
            DecodeMode::Greedy => {
                let t = argmax(&q);
                (t, verify_greedy(&p, t))
            }
            DecodeMode::Sampling => {
                let t = sample(&q, rng);
                (t, verify_sampling(&p, &q, t, rng).expect("sampled token has positive draft probability"))
            }
        };
        if !ok {
            return j;
        }
        ctx.push(tok);
    }
    cap
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleStats {
    pub mean: f64,
    pub variance: f64,
    /// `histogram[k]` counts runs with oracle length `k`, for `k` in `0..=cap`.
    pub histogram: Vec<u64>,
    pub samples: usize,
}

pub fn oracle_length_stats<T, D>(
    target: &T,
    draft: &D,
    prompts: &[Vec<TokenId>],
    mode: DecodeMode,
    rng: &mut SessionRng,
    cap: usize,
    n_runs: usize,
) -> Result<OracleStats, HarnessError>
where
    T: AutoregressiveModel + ?Sized,
    D: AutoregressiveModel + ?Sized,
{
    if n_runs == 0 {
        return Err(invalid("n_runs", "must be at least 1"));
    }
    if cap == 0 {
        return Err(invalid("cap", "must be at least 1"));
    }
    if prompts.is_empty() {
        return Err(invalid("prompts", "must be non-empty"));
    }
    let mut histogram = vec![0u64; cap + 1];
    let mut lengths = Vec::with_capacity(prompts.len() * n_runs);
    for prompt in prompts {
        for _ in 0..n_runs {
            let mut run_rng = rng.fork();
            let len = oracle_draft_length(target, draft, prompt, mode, &mut run_rng, cap);
            histogram[len] += 1;
            lengths.push(len as f64);
        }
    }
    let (mean, variance) = mean_var(&lengths).expect("at least one run");
    Ok(OracleStats { mean, variance, histogram, samples: lengths.len() })
}

/// Population mean and variance.
pub fn mean_var(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Some((mean, var))
}

fn mean(xs: &[f64]) -> Option<f64> {
    mean_var(xs).map(|(m, _)| m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyStats {
    pub accepted_mean: Option<f64>,
    pub rejected_mean: Option<f64>,
    pub n_accepted: usize,
    pub n_rejected: usize,
}

/// Mean draft entropy at accepted positions versus at rejected positions.
/// Tokens after the first rejection in a round were never verified and are
/// left out.
pub fn entropy_stats<'a>(records: impl IntoIterator<Item = &'a RoundRecord>) -> EntropyStats {
    let (mut acc_sum, mut rej_sum) = (0.0, 0.0);
    let (mut n_acc, mut n_rej) = (0usize, 0usize);
    for r in records {
        for &h in &r.draft_entropies[..r.accepted_count] {
            acc_sum += h;
            n_acc += 1;
        }
        if r.accepted_count < r.proposed() {
            rej_sum += r.draft_entropies[r.accepted_count];
            n_rej += 1;
        }
    }
    EntropyStats {
        accepted_mean: (n_acc > 0).then(|| acc_sum / n_acc as f64),
        rejected_mean: (n_rej > 0).then(|| rej_sum / n_rej as f64),
        n_accepted: n_acc,
        n_rejected: n_rej,
    }
}

/// Running sums behind a KL trace, index 0 at the rejected position and
/// index `i` at `i` positions before it within the same round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlTrace {
    pub sums: Vec<f64>,
    pub counts: Vec<usize>,
}

impl KlTrace {
    pub fn new(window: usize) -> Self {
        KlTrace { sums: vec![0.0; window + 1], counts: vec![0; window + 1] }
    }

    pub fn window(&self) -> usize {
        self.sums.len() - 1
    }

    pub fn means(&self) -> Vec<Option<f64>> {
        self.sums.iter().zip(&self.counts).map(|(&s, &c)| (c > 0).then(|| s / c as f64)).collect()
    }

    pub fn accumulate<T, D>(&mut self, target: &T, draft: &D, result: &DecodeResult)
    where
        T: AutoregressiveModel + ?Sized,
        D: AutoregressiveModel + ?Sized,
    {
        for r in &result.rounds {
            if r.accepted_count >= r.proposed() {
                continue;
            }
            let reject_pos = r.context_start + r.accepted_count;
            let depth = r.accepted_count.min(self.window());
            for i in 0..=depth {
                let ctx = &result.output_tokens[..reject_pos - i];
                let kl = kl_divergence(&draft.next_distribution(ctx), &target.next_distribution(ctx));
                self.sums[i] += kl;
                self.counts[i] += 1;
            }
        }
    }
}

/// Mean `KL(q‖p)` at rejected positions and at each of the `window`
/// positions before them. Rounds with fewer accepted tokens than `window`
/// contribute the positions they have.
pub fn kl_trace<T, D>(target: &T, draft: &D, result: &DecodeResult, window: usize) -> Vec<Option<f64>>
where
    T: AutoregressiveModel + ?Sized,
    D: AutoregressiveModel + ?Sized,
{
    let mut t = KlTrace::new(window);
    t.accumulate(target, draft, result);
    t.means()
}

/// The `top_m` largest log probabilities, descending.
pub fn sorted_logprob_profile(d: &Distribution, top_m: usize) -> Vec<f64> {
    let mut logs: Vec<f64> = d.probs().iter().map(|&p| libm::log(p)).collect();
    logs.sort_by(|a, b| b.total_cmp(a));
    logs.truncate(top_m.min(d.len()));
    logs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquivalenceConfig {
    pub policy: PolicySpec,
    #[serde(default)]
    pub residual: ResidualRule,
    pub horizon: usize,
    pub n_samples: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_EQUIVALENCE_THRESHOLD
}

impl EquivalenceConfig {
    pub fn validate(&self, vocab: usize) -> Result<(), HarnessError> {
        self.policy.validate()?;
        if self.horizon == 0 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        let states = vocab.checked_pow(self.horizon as u32);
        if states.is_none_or(|s| s > MAX_ENUMERATED_SEQUENCES) {
            return Err(HarnessError::StateSpaceTooLarge { vocab, horizon: self.horizon, limit: MAX_ENUMERATED_SEQUENCES });
        }
        if self.n_samples < MIN_EQUIVALENCE_SAMPLES {
            return Err(invalid("n_samples", format!("must be at least {MIN_EQUIVALENCE_SAMPLES}")));
        }
        if !(self.threshold > 0.0) {
            return Err(invalid("threshold", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceOutcome {
    pub tvd: f64,
    pub threshold: f64,
    pub passed: bool,
    pub n_sequences: usize,
    pub n_samples: usize,
}

/// Exact chain-rule probability of every length-`horizon` continuation,
/// indexed by the continuation read as a base-`vocab` number (first token
/// most significant).
pub fn exact_continuation_probs<T: AutoregressiveModel + ?Sized>(target: &T, prompt: &[TokenId], horizon: usize) -> Vec<f64> {
    let vocab = target.vocab_size();
    let mut probs = vec![1.0];
    let mut ctxs: Vec<Vec<TokenId>> = vec![prompt.to_vec()];
    for _ in 0..horizon {
        let mut next_probs = Vec::with_capacity(probs.len() * vocab);
        let mut next_ctxs = Vec::with_capacity(probs.len() * vocab);
        for (pr, ctx) in probs.iter().zip(&ctxs) {
            let d = target.next_distribution(ctx);
            for t in 0..vocab {
                next_probs.push(pr * d.probs()[t]);
                let mut c = ctx.clone();
                c.push(TokenId(t));
                next_ctxs.push(c);
            }
        }
        probs = next_probs;
        ctxs = next_ctxs;
    }
    probs
}

fn sequence_index(tokens: &[TokenId], vocab: usize) -> usize {
    tokens.iter().fold(0, |acc, t| acc * vocab + t.0)
}

fn empirical_tvd(counts: &[u64], exact: &[f64], n: usize) -> f64 {
    0.5 * counts.iter().zip(exact).map(|(&c, &p)| (c as f64 / n as f64 - p).abs()).sum::<f64>()
}

/// Runs `n_samples` independent speculative decodes of `horizon` tokens and
/// compares the empirical continuation distribution with the exact target
/// distribution.
pub fn equivalence_test<T, D>(
    target: &T,
    draft: &D,
    cfg: &EquivalenceConfig,
    prompt: &[TokenId],
    rng: &mut SessionRng,
) -> Result<EquivalenceOutcome, HarnessError>
where
    T: AutoregressiveModel + ?Sized,
    D: AutoregressiveModel + ?Sized,
{
    let vocab = target.vocab_size();
    cfg.validate(vocab)?;
    let exact = exact_continuation_probs(target, prompt, cfg.horizon);
    let mut counts = vec![0u64; exact.len()];
    let max_len = prompt.len() + cfg.horizon;
    for _ in 0..cfg.n_samples {
        let mut session = rng.fork();
        let mut policy = cfg.policy.build()?;
        let res = speculative_decode_with(target, draft, prompt, max_len, &mut policy, DecodeMode::Sampling, cfg.residual, &mut session)?;
        counts[sequence_index(res.generated(), vocab)] += 1;
    }
    let tvd = empirical_tvd(&counts, &exact, cfg.n_samples);
    Ok(EquivalenceOutcome { tvd, threshold: cfg.threshold, passed: tvd <= cfg.threshold, n_sequences: exact.len(), n_samples: cfg.n_samples })
}

/// Same statistic for plain target sampling, the noise floor of the test.
pub fn autoregressive_tvd<T: AutoregressiveModel + ?Sized>(
    target: &T,
    prompt: &[TokenId],
    horizon: usize,
    n_samples: usize,
    rng: &mut SessionRng,
) -> f64 {
    let vocab = target.vocab_size();
    let exact = exact_continuation_probs(target, prompt, horizon);
    let mut counts = vec![0u64; exact.len()];
    for _ in 0..n_samples {
        let mut session = rng.fork();
        let out = engine::autoregressive_decode(target, prompt, prompt.len() + horizon, DecodeMode::Sampling, &mut session);
        counts[sequence_index(&out[prompt.len()..], vocab)] += 1;
    }
    empirical_tvd(&counts, &exact, n_samples)
}

fn default_oracle_cap() -> usize {
    DEFAULT_MAX_DRAFT_LEN
}
fn default_kl_window() -> usize {
    DEFAULT_KL_WINDOW
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub policy: PolicySpec,
    pub mode: DecodeMode,
    /// Tokens generated beyond each prompt.
    pub horizon: usize,
    pub prompts: Vec<Vec<TokenId>>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub cost_model: CostModel,
    #[serde(default = "default_oracle_cap")]
    pub oracle_cap: usize,
    #[serde(default = "default_kl_window")]
    pub kl_window: usize,
}

impl ExperimentConfig {
    pub fn validate(&self, vocab: usize) -> Result<(), HarnessError> {
        self.policy.validate()?;
        self.cost_model.validate()?;
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "must be non-empty"));
        }
        if self.prompts.is_empty() {
            return Err(invalid("prompts", "must be non-empty"));
        }
        if self.prompts.iter().any(|p| p.is_empty()) {
            return Err(invalid("prompts", "every prompt needs at least one token"));
        }
        if self.prompts.iter().flatten().any(|t| t.0 >= vocab) {
            return Err(invalid("prompts", "token outside vocabulary"));
        }
        if self.horizon == 0 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        if self.oracle_cap == 0 {
            return Err(invalid("oracle_cap", "must be at least 1"));
        }
        if self.kl_window == 0 {
            return Err(invalid("kl_window", "must be at least 1"));
        }
        Ok(())
    }
}

/// Stream used by the decode of one (seed, prompt) session.
pub fn session_rng(seed: u64, prompt_index: usize) -> SessionRng {
    SessionRng::derived(seed, &[prompt_index as u64, 0])
}

/// Stream used to re-simulate the oracle length at the start of a round.
pub fn oracle_rng(seed: u64, prompt_index: usize, round_index: usize) -> SessionRng {
    SessionRng::derived(seed, &[prompt_index as u64, 1, round_index as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub seed: u64,
    pub prompt_index: usize,
    pub result: DecodeResult,
    /// Oracle draft length from each round's starting context.
    pub oracle_lengths: Vec<usize>,
}

impl SessionRecord {
    /// `proposed - oracle` for rounds not truncated by the output budget.
    pub fn deltas(&self) -> impl Iterator<Item = f64> + '_ {
        self.result
            .rounds
            .iter()
            .zip(&self.oracle_lengths)
            .filter(|(r, _)| r.stop != StopReason::Budget && r.proposed() > 0)
            .map(|(r, &o)| r.proposed() as f64 - o as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub rounds: usize,
    pub accept_rate: f64,
    pub proposed_mean: f64,
    pub proposed_var: f64,
    pub accepted_mean: f64,
    pub accepted_var: f64,
    pub mean_delta_to_oracle: Option<f64>,
    pub mean_abs_delta_to_oracle: Option<f64>,
    pub entropy: EntropyStats,
    /// `None` where no position contributed or the KL was infinite.
    pub kl_trace: Vec<Option<f64>>,
    pub generated_tokens: usize,
    pub target_forward_calls: usize,
    pub draft_forward_calls: usize,
    pub estimated_speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub policy_label: String,
    pub config: ExperimentConfig,
    pub summary: ExperimentSummary,
    pub sessions: Vec<SessionRecord>,
}

/// Recomputes every aggregate from the raw session records.
pub fn summarize<T, D>(target: &T, draft: &D, cfg: &ExperimentConfig, sessions: &[SessionRecord]) -> ExperimentSummary
where
    T: AutoregressiveModel + ?Sized,
    D: AutoregressiveModel + ?Sized,
{
    let rounds: Vec<&RoundRecord> = sessions.iter().flat_map(|s| s.result.rounds.iter()).filter(|r| r.proposed() > 0).collect();
    let proposed: Vec<f64> = rounds.iter().map(|r| r.proposed() as f64).collect();
    let accepted: Vec<f64> = rounds.iter().map(|r| r.accepted_count as f64).collect();
    let total_proposed: f64 = proposed.iter().sum();
    let total_accepted: f64 = accepted.iter().sum();
    let (proposed_mean, proposed_var) = mean_var(&proposed).unwrap_or((0.0, 0.0));
    let (accepted_mean, accepted_var) = mean_var(&accepted).unwrap_or((0.0, 0.0));
    let deltas: Vec<f64> = sessions.iter().flat_map(SessionRecord::deltas).collect();
    let abs: Vec<f64> = deltas.iter().map(|d| d.abs()).collect();

    let mut trace = KlTrace::new(cfg.kl_window);
    for s in sessions {
        trace.accumulate(target, draft, &s.result);
    }
    let kl_trace = trace.means().into_iter().map(|m| m.filter(|v| v.is_finite())).collect();

    let generated: usize = sessions.iter().map(|s| s.result.generated().len()).sum();
    let target_calls: usize = sessions.iter().map(|s| s.result.target_forward_calls).sum();
    let draft_calls: usize = sessions.iter().map(|s| s.result.draft_forward_calls).sum();
    ExperimentSummary {
        rounds: rounds.len(),
        accept_rate: if total_proposed > 0.0 { total_accepted / total_proposed } else { 0.0 },
        proposed_mean,
        proposed_var,
        accepted_mean,
        accepted_var,
        mean_delta_to_oracle: mean(&deltas),
        mean_abs_delta_to_oracle: mean(&abs),
        entropy: entropy_stats(rounds.iter().copied()),
        kl_trace,
        generated_tokens: generated,
        target_forward_calls: target_calls,
        draft_forward_calls: draft_calls,
        estimated_speedup: cfg.cost_model.speedup(generated, draft_calls, target_calls),
    }
}

/// One decode per (seed, prompt), each round paired with a fresh oracle
/// simulation from its starting context.
pub fn run_sessions<T, D>(target: &T, draft: &D, cfg: &ExperimentConfig) -> Result<Vec<SessionRecord>, HarnessError>
where
    T: AutoregressiveModel + ?Sized,
    D: AutoregressiveModel + ?Sized,
{
    cfg.validate(target.vocab_size())?;
    let mut sessions = Vec::with_capacity(cfg.seeds.len() * cfg.prompts.len());
    for &seed in &cfg.seeds {
        for (pi, prompt) in cfg.prompts.iter().enumerate() {
            let mut rng = session_rng(seed, pi);
            let mut policy = cfg.policy.build()?;
            let max_len = prompt.len() + cfg.horizon;
            let result = engine::speculative_decode(target, draft, prompt, max_len, &mut policy, cfg.mode, &mut rng)?;
            let oracle_lengths = result
                .rounds
                .iter()
                .map(|r| {
                    let mut orng = oracle_rng(seed, pi, r.round_index);
                    oracle_draft_length(target, draft, &result.output_tokens[..r.context_start], cfg.mode, &mut orng, cfg.oracle_cap)
                })
                .collect();
            sessions.push(SessionRecord { seed, prompt_index: pi, result, oracle_lengths });
        }
    }
    Ok(sessions)
}

pub fn run_experiment<T, D>(target: &T, draft: &D, cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError>
where
    T: AutoregressiveModel + ?Sized,
    D: AutoregressiveModel + ?Sized,
{
    let sessions = run_sessions(target, draft, cfg)?;
    let summary = summarize(target, draft, cfg, &sessions);
    Ok(ExperimentReport { policy_label: cfg.policy.label(), config: cfg.clone(), summary, sessions })
}

/// Picks the SVIP threshold with the best estimated speedup on held-out
/// sessions. Returns the winner and every `(h, speedup)` score.
pub fn calibrate_svip_threshold<T, D>(
    target: &T,
    draft: &D,
    held_out: &ExperimentConfig,
    candidates: &[f64],
) -> Result<(f64, Vec<(f64, f64)>), HarnessError>
where
    T: AutoregressiveModel + ?Sized,
    D: AutoregressiveModel + ?Sized,
{
    calibrate_shared_threshold(&[(target, draft)], held_out, candidates)
}

/// One threshold for a whole suite of pairs, scored by the mean of the
/// per-pair held-out speedups. Ties keep the earlier candidate.
pub fn calibrate_shared_threshold<T, D>(
    pairs: &[(&T, &D)],
    held_out: &ExperimentConfig,
    candidates: &[f64],
) -> Result<(f64, Vec<(f64, f64)>), HarnessError>
where
    T: AutoregressiveModel + ?Sized,
    D: AutoregressiveModel + ?Sized,
{
    if candidates.is_empty() {
        return Err(invalid("candidates", "must be non-empty"));
    }
    if pairs.is_empty() {
        return Err(invalid("pairs", "must be non-empty"));
    }
    let max_len = match held_out.policy {
        PolicySpec::Svip { max_len, .. } => max_len,
        _ => DEFAULT_MAX_DRAFT_LEN,
    };
    let mut scores = Vec::with_capacity(candidates.len());
    for &h in candidates {
        let cfg = ExperimentConfig { policy: PolicySpec::Svip { h, max_len }, ..held_out.clone() };
        let mut total = 0.0;
        for &(target, draft) in pairs {
            let sessions = run_sessions(target, draft, &cfg)?;
            let generated: usize = sessions.iter().map(|s| s.result.generated().len()).sum();
            let d: usize = sessions.iter().map(|s| s.result.draft_forward_calls).sum();
            let r: usize = sessions.iter().map(|s| s.result.target_forward_calls).sum();
            total += cfg.cost_model.speedup(generated, d, r);
        }
        scores.push((h, total / pairs.len() as f64));
    }
    let best = scores.iter().copied().fold(scores[0], |best, s| if s.1 > best.1 { s } else { best });
    Ok((best.0, scores))
}

/// Rounds violating the entropy stopping rule: a non-initial token drawn
/// from a distribution with `sqrt(H) > h`, a policy stop whose probe had
/// `sqrt(H) <= h`, or a cap stop short of the cap.
pub fn svip_violations<'a>(rounds: impl IntoIterator<Item = &'a RoundRecord>, cfg: &SvipConfig) -> usize {
    rounds
        .into_iter()
        .filter(|r| {
            let late_uncertain = r.draft_entropies.iter().skip(1).any(|&h| cfg.stops_at(h));
            let bad_stop = match r.stop {
                StopReason::Policy => !r.next_entropy.is_some_and(|h| cfg.stops_at(h)),
                StopReason::Cap => r.proposed() != cfg.max_len,
                StopReason::Budget => false,
            };
            late_uncertain || bad_stop
        })
        .count()
}

/// First round whose length or recorded target departs from the +2/-1
/// recurrence clamped to `[1, cap]`, if any.
pub fn heuristic_trajectory_mismatch(rounds: &[RoundRecord], init: usize, cap: usize) -> Option<usize> {
    let mut expected = init;
    for r in rounds {
        if r.proposed() == 0 {
            continue;
        }
        if r.policy_target != Some(expected) {
            return Some(r.round_index);
        }
        let len_ok = match r.stop {
            StopReason::Budget => r.proposed() <= expected,
            _ => r.proposed() == expected,
        };
        if !len_ok {
            return Some(r.round_index);
        }
        expected = heuristic_next_length(expected, r.all_accepted(), cap);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{temper, ModelSpec, RowSpec, TabularModel};
    use crate::policies::{constant_policy, svip_policy};
    use crate::testutil::close;

    fn pair(seed: u64) -> (TabularModel, TabularModel) {
        let mut rng = SessionRng::new(seed);
        let t = TabularModel::from_fn(4, 1, |_| Distribution::random_simplex(4, &mut rng).sharpened(3.0));
        let d = TabularModel::from_fn(4, 1, |_| Distribution::random_simplex(4, &mut rng));
        (t, d)
    }

    #[test]
    fn speedup_examples() {
        let cm = CostModel { r_draft: 0.1, c_verify_overhead: 0.0 };
        assert!(close(cm.speedup(100, 120, 25), 100.0 / 37.0, 1e-12));
        let cm2 = CostModel { r_draft: 0.1, c_verify_overhead: 0.5 };
        assert!(close(cm2.speedup(40, 0, 40), 1.0 / 1.5, 1e-12));
        // every round proposes k = 4 and accepts them all
        let tiny = CostModel { r_draft: 1e-12, c_verify_overhead: 0.0 };
        assert!(close(tiny.speedup(50, 40, 10), 5.0, 1e-9));
    }

    #[test]
    fn oracle_identical_models_hit_cap() {
        let (t, _) = pair(1);
        let mut rng = SessionRng::new(0);
        assert_eq!(oracle_draft_length(&t, &t, &[TokenId(0)], DecodeMode::Greedy, &mut rng, 17), 17);
        assert_eq!(oracle_draft_length(&t, &t, &[TokenId(0)], DecodeMode::Sampling, &mut rng, 17), 17);
        let stats = oracle_length_stats(&t, &t, &[vec![TokenId(0)], vec![TokenId(3)]], DecodeMode::Sampling, &mut rng, 9, 25).unwrap();
        assert_eq!(stats.mean, 9.0);
        assert_eq!(stats.variance, 0.0);
        assert_eq!(stats.histogram.iter().sum::<u64>(), 50);
    }

    #[test]
    fn oracle_greedy_walk() {
        // target forces 0 -> 1 -> 1 -> 0 -> ...; draft is uniform so its argmax is always 0
        let target = TabularModel::from_spec(&ModelSpec {
            vocab_size: 2,
            context_order: 2,
            rows: vec![
                RowSpec { context: vec![0, 0], probs: vec![0.0, 1.0] },
                RowSpec { context: vec![0, 1], probs: vec![0.0, 1.0] },
                RowSpec { context: vec![1, 1], probs: vec![1.0, 0.0] },
                RowSpec { context: vec![1, 0], probs: vec![0.0, 1.0] },
            ],
            default: Some(vec![1.0, 0.0]),
        })
        .unwrap();
        let draft = TabularModel::from_spec(&ModelSpec { vocab_size: 2, context_order: 0, rows: vec![RowSpec { context: vec![], probs: vec![0.5, 0.5] }], default: None }).unwrap();
        let mut rng = SessionRng::new(0);
        // from [1, 1] the target wants 0 (accepted), then 1 (rejected)
        assert_eq!(oracle_draft_length(&target, &draft, &[TokenId(1), TokenId(1)], DecodeMode::Greedy, &mut rng, 40), 1);
        assert_eq!(oracle_draft_length(&target, &draft, &[TokenId(0), TokenId(0)], DecodeMode::Greedy, &mut rng, 40), 0);
        // default row (BOS contexts) forces 0, then [BOS,0] also default -> 0, then [0,0] -> 1
        assert_eq!(oracle_draft_length(&target, &draft, &[], DecodeMode::Greedy, &mut rng, 40), 2);
    }

    #[test]
    fn entropy_stats_bookkeeping() {
        let r = RoundRecord {
            round_index: 0,
            context_start: 1,
            proposed_tokens: vec![TokenId(0), TokenId(1)],
            draft_entropies: vec![0.1, 0.9],
            next_entropy: None,
            stop: StopReason::Cap,
            policy_target: None,
            accepted_count: 1,
            correction: Some(TokenId(0)),
            bonus: None,
        };
        let s = entropy_stats([&r]);
        assert_eq!(s.accepted_mean, Some(0.1));
        assert_eq!(s.rejected_mean, Some(0.9));
        let all = RoundRecord { accepted_count: 2, correction: None, bonus: Some(TokenId(1)), ..r };
        assert_eq!(entropy_stats([&all]).rejected_mean, None);
    }

    #[test]
    fn kl_trace_shapes() {
        let (t, d) = pair(5);
        let mut rng = SessionRng::new(1);
        let res = engine::speculative_decode(&t, &t, &[TokenId(0)], 60, &mut constant_policy(4).unwrap(), DecodeMode::Sampling, &mut rng).unwrap();
        let tr = kl_trace(&t, &t, &res, 3);
        assert_eq!(tr.len(), 4);
        assert!(tr.iter().all(|m| m.is_none_or(|v| v == 0.0)));
        let res = engine::speculative_decode(&t, &d, &[TokenId(0)], 200, &mut constant_policy(6).unwrap(), DecodeMode::Sampling, &mut rng).unwrap();
        assert_eq!(kl_trace(&t, &d, &res, 7).len(), 8);
    }

    #[test]
    fn kl_trace_peaks_at_rejection() {
        // Agreement everywhere except after token 3, where the draft is badly wrong.
        let target = TabularModel::from_fn(4, 1, |ctx| match ctx.last() {
            Some(TokenId(3)) => Distribution::new(vec![0.97, 0.01, 0.01, 0.01]).unwrap(),
            _ => Distribution::new(vec![0.3, 0.3, 0.1, 0.3]).unwrap(),
        });
        let draft = TabularModel::from_fn(4, 1, |ctx| match ctx.last() {
            Some(TokenId(3)) => Distribution::new(vec![0.01, 0.01, 0.01, 0.97]).unwrap(),
            _ => Distribution::new(vec![0.3, 0.3, 0.1, 0.3]).unwrap(),
        });
        let mut rng = SessionRng::new(2);
        let mut trace = KlTrace::new(3);
        for _ in 0..50 {
            let res = engine::speculative_decode(&target, &draft, &[TokenId(0)], 100, &mut constant_policy(6).unwrap(), DecodeMode::Sampling, &mut rng).unwrap();
            trace.accumulate(&target, &draft, &res);
        }
        let m = trace.means();
        let peak = m[0].unwrap();
        for later in m.iter().skip(1).flatten() {
            assert!(peak > *later);
        }
    }

    #[test]
    fn logprob_profile() {
        let u = sorted_logprob_profile(&Distribution::uniform(4), 4);
        assert!(u.iter().all(|&x| close(x, libm::log(0.25), 1e-15)));
        let p = sorted_logprob_profile(&Distribution::new(vec![0.2, 0.7, 0.1]).unwrap(), 2);
        assert_eq!(p, vec![libm::log(0.7), libm::log(0.2)]);
    }

    #[test]
    fn equivalence_validation() {
        let (t, d) = pair(3);
        let cfg = EquivalenceConfig { policy: PolicySpec::constant(5), residual: ResidualRule::TargetMinusDraft, horizon: 7, n_samples: 20_000, threshold: 0.01 };
        assert!(matches!(equivalence_test(&t, &d, &cfg, &[TokenId(0)], &mut SessionRng::new(0)), Err(HarnessError::StateSpaceTooLarge { .. })));
        let few = EquivalenceConfig { horizon: 2, n_samples: 10, ..cfg };
        assert!(matches!(equivalence_test(&t, &d, &few, &[TokenId(0)], &mut SessionRng::new(0)), Err(HarnessError::InvalidConfig { field: "n_samples", .. })));
    }

    #[test]
    fn exact_probs_sum_to_one() {
        let (t, _) = pair(4);
        let probs = exact_continuation_probs(&t, &[TokenId(1)], 3);
        assert_eq!(probs.len(), 64);
        assert!(close(probs.iter().sum::<f64>(), 1.0, 1e-12));
        let seq = [TokenId(2), TokenId(0), TokenId(3)];
        assert!(close(probs[sequence_index(&seq, 4)], engine::sequence_probability(&t, &[TokenId(1)], &seq), 1e-15));
    }

    #[test]
    fn experiment_summary_recomputes() {
        let (t, base) = pair(6);
        let d = temper(&base, 1.5, 0.1).unwrap();
        let cfg = ExperimentConfig {
            policy: PolicySpec::heuristic(),
            mode: DecodeMode::Sampling,
            horizon: 50,
            prompts: vec![vec![TokenId(0)], vec![TokenId(2), TokenId(1)]],
            seeds: vec![1, 2],
            cost_model: CostModel::default(),
            oracle_cap: 40,
            kl_window: 4,
        };
        let rep = run_experiment(&t, &d, &cfg).unwrap();
        assert_eq!(rep.sessions.len(), 4);
        assert_eq!(summarize(&t, &d, &cfg, &rep.sessions), rep.summary);
        assert!((0.0..=1.0).contains(&rep.summary.accept_rate));
        for s in &rep.sessions {
            assert!(s.result.is_consistent());
            assert_eq!(heuristic_trajectory_mismatch(&s.result.rounds, 5, 40), None);
        }
        let bad = ExperimentConfig { seeds: vec![], ..cfg };
        assert!(matches!(run_experiment(&t, &d, &bad), Err(HarnessError::InvalidConfig { field: "seeds", .. })));
    }

    #[test]
    fn svip_rounds_obey_threshold() {
        let (t, base) = pair(8);
        let d = temper(&base, 0.5, 0.0).unwrap();
        for h in [0.2, 0.3, 0.4, 0.5, 0.8] {
            let cfg = SvipConfig { h, max_len: 40 };
            for seed in 0..5 {
                let res = engine::speculative_decode(&t, &d, &[TokenId(0)], 150, &mut svip_policy(cfg).unwrap(), DecodeMode::Sampling, &mut SessionRng::new(seed)).unwrap();
                assert_eq!(svip_violations(&res.rounds, &cfg), 0);
            }
        }
    }
}
