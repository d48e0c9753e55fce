//! Draft-then-verify decoding.
//!
//! Each round drafts tokens from `q` until the policy stops, scores every
//! drafted position plus one with a single batched target evaluation,
//! verifies left to right, replaces the first rejected token with a
//! correction and, when everything was accepted, appends a bonus token from
//! the target. Under [`DecodeMode::Sampling`] the output follows the target
//! distribution exactly; under [`DecodeMode::Greedy`] it equals target-only
//! greedy decoding token for token.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{self, argmax, entropy, residual, sample, DistError, Distribution, TokenId};
use crate::models::AutoregressiveModel;
use crate::policies::LengthPolicy;
use crate::rng::SessionRng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("model pair mismatch: target vocabulary {target}, draft vocabulary {draft}")]
    ModelPairMismatch { target: usize, draft: usize },
    #[error("policy contract violation: {0}")]
    PolicyContract(&'static str),
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("max length {max_len} must exceed prompt length {prompt_len}")]
    HorizonTooShort { prompt_len: usize, max_len: usize },
    #[error("impossible draft token {0}: zero draft probability")]
    ImpossibleDraftToken(TokenId),
    #[error("prompt token {0} outside vocabulary")]
    InvalidPromptToken(TokenId),
    #[error(transparent)]
    Dist(#[from] DistError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Sampling,
    Greedy,
}

/// Orientation of the correction distribution. Only `TargetMinusDraft`
/// preserves the target distribution; the other exists as a negative control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualRule {
    #[default]
    TargetMinusDraft,
    DraftMinusTarget,
}

/// Why drafting ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The policy declined to continue; `next_entropy` holds the probe.
    Policy,
    /// The policy's hard cap was reached.
    Cap,
    /// The remaining output budget was exhausted.
    Budget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round_index: usize,
    /// Output length when the round started.
    pub context_start: usize,
    pub proposed_tokens: Vec<TokenId>,
    /// Entropy of the distribution each proposed token was drawn from.
    pub draft_entropies: Vec<f64>,
    /// Entropy of the next-token draft distribution that ended the round.
    pub next_entropy: Option<f64>,
    pub stop: StopReason,
    /// Round length the policy was aiming for when the round started.
    pub policy_target: Option<usize>,
    pub accepted_count: usize,
    pub correction: Option<TokenId>,
    pub bonus: Option<TokenId>,
}

impl RoundRecord {
    pub fn proposed(&self) -> usize {
        self.proposed_tokens.len()
    }

    pub fn all_accepted(&self) -> bool {
        self.accepted_count == self.proposed_tokens.len()
    }

    /// Tokens this round appended to the output.
    pub fn emitted(&self) -> usize {
        self.accepted_count + 1
    }

    pub fn is_well_formed(&self) -> bool {
        let n = self.proposed_tokens.len();
        self.accepted_count <= n
            && self.draft_entropies.len() == n
            && self.correction.is_some() == (self.accepted_count < n)
            && self.bonus.is_some() == (self.accepted_count == n)
            && (self.stop != StopReason::Policy || self.next_entropy.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub prompt_len: usize,
    /// Prompt followed by generated tokens.
    pub output_tokens: Vec<TokenId>,
    pub rounds: Vec<RoundRecord>,
    pub target_forward_calls: usize,
    /// One per proposed token.
    pub draft_forward_calls: usize,
    /// Next-token lookups made only to let the policy decide to stop.
    pub draft_probe_calls: usize,
}

impl DecodeResult {
    pub fn generated(&self) -> &[TokenId] {
        &self.output_tokens[self.prompt_len..]
    }

    pub fn accepted_tokens(&self) -> usize {
        self.rounds.iter().map(|r| r.accepted_count).sum()
    }

    pub fn proposed_tokens(&self) -> usize {
        self.rounds.iter().map(|r| r.proposed()).sum()
    }

    /// Checks the accounting identities that tie rounds to the output.
    pub fn is_consistent(&self) -> bool {
        self.rounds.iter().all(RoundRecord::is_well_formed)
            && self.rounds.iter().map(RoundRecord::emitted).sum::<usize>() == self.generated().len()
            && self.target_forward_calls == self.rounds.len()
            && self.draft_forward_calls == self.proposed_tokens()
            && self.rounds.iter().enumerate().all(|(i, r)| r.round_index == i)
    }
}

/// Accepts with probability `min(1, p(token) / q(token))`.
pub fn verify_sampling(p: &Distribution, q: &Distribution, token: TokenId, rng: &mut SessionRng) -> Result<bool, EngineError> {
    let qx = q.prob(token);
    if qx <= 0.0 {
        return Err(EngineError::ImpossibleDraftToken(token));
    }
    let r = rng.uniform();
    Ok(r < p.prob(token) / qx)
}

pub fn verify_greedy(p: &Distribution, token: TokenId) -> bool {
    argmax(p) == token
}

/// Draws the replacement for a rejected token from `residual(p, q)`.
pub fn correct_sampling(p: &Distribution, q: &Distribution, rng: &mut SessionRng) -> Result<TokenId, EngineError> {
    let r = residual(p, q)?;
    Ok(sample(&r, rng))
}

pub fn correct_greedy(p: &Distribution) -> TokenId {
    argmax(p)
}

fn correct_with_rule(p: &Distribution, q: &Distribution, rule: ResidualRule, rng: &mut SessionRng) -> Result<TokenId, EngineError> {
    let attempt = match rule {
        ResidualRule::TargetMinusDraft => correct_sampling(p, q, rng),
        ResidualRule::DraftMinusTarget => correct_sampling(q, p, rng),
    };
    match attempt {
        // Rejection with p == q (to 1e-12) has vanishing probability; the
        // limit of the residual construction is p itself.
        Err(EngineError::Dist(DistError::DegenerateResidual)) => Ok(sample(p, rng)),
        other => other,
    }
}

fn draw(d: &Distribution, mode: DecodeMode, rng: &mut SessionRng) -> TokenId {
    match mode {
        DecodeMode::Sampling => sample(d, rng),
        DecodeMode::Greedy => argmax(d),
    }
}

/// Speculative decoding until the output holds `max_len` tokens.
pub fn speculative_decode<T, D, P>(
    target: &T,
    draft: &D,
    prompt: &[TokenId],
    max_len: usize,
    policy: &mut P,
    mode: DecodeMode,
    rng: &mut SessionRng,
) -> Result<DecodeResult, EngineError>
where
    T: AutoregressiveModel + ?Sized,
    D: AutoregressiveModel + ?Sized,
    P: LengthPolicy + ?Sized,
{
    speculative_decode_with(target, draft, prompt, max_len, policy, mode, ResidualRule::TargetMinusDraft, rng)
}

/// [`speculative_decode`] with an explicit correction orientation.
///
/// The final round is truncated so the output never exceeds `max_len`: it
/// proposes at most `max_len - n - 1` tokens, and when that is zero the
/// round degenerates to a single target-sampled token.
#[allow(clippy::too_many_arguments)]
pub fn speculative_decode_with<T, D, P>(
    target: &T,
    draft: &D,
    prompt: &[TokenId],
    max_len: usize,
    policy: &mut P,
    mode: DecodeMode,
    rule: ResidualRule,
    rng: &mut SessionRng,
) -> Result<DecodeResult, EngineError>
where
    T: AutoregressiveModel + ?Sized,
    D: AutoregressiveModel + ?Sized,
    P: LengthPolicy + ?Sized,
{
    let vocab = target.vocab_size();
    if vocab != draft.vocab_size() {
        return Err(EngineError::ModelPairMismatch { target: vocab, draft: draft.vocab_size() });
    }
    if prompt.is_empty() {
        return Err(EngineError::EmptyPrompt);
    }
    if max_len <= prompt.len() {
        return Err(EngineError::HorizonTooShort { prompt_len: prompt.len(), max_len });
    }
    if let Some(&bad) = prompt.iter().find(|t| t.0 >= vocab) {
        return Err(EngineError::InvalidPromptToken(bad));
    }

    let mut out = prompt.to_vec();
    let mut rounds = Vec::new();
    let (mut draft_calls, mut probe_calls) = (0usize, 0usize);

    while out.len() < max_len {
        let n = out.len();
        let budget = max_len - n - 1;
        let cap = policy.max_len();
        if cap == 0 {
            return Err(EngineError::PolicyContract("max_len of zero"));
        }

        let policy_target = policy.target_length();
        let mut proposed = Vec::new();
        let mut q_dists = Vec::new();
        let mut entropies = Vec::new();
        let mut next_entropy = None;
        let mut stop = StopReason::Budget;

        if budget > 0 {
            let mut q = draft.next_distribution(&out);
            draft_calls += 1;
            loop {
                let tok = draw(&q, mode, rng);
                entropies.push(entropy(&q));
                proposed.push(tok);
                q_dists.push(q);
                out.push(tok);
                let j = proposed.len();
                if j >= budget {
                    stop = StopReason::Budget;
                    break;
                }
                if j >= cap {
                    stop = StopReason::Cap;
                    break;
                }
                let probe = draft.next_distribution(&out);
                let h = entropy(&probe);
                if !policy.should_continue(j, h) {
                    probe_calls += 1;
                    next_entropy = Some(h);
                    stop = StopReason::Policy;
                    break;
                }
                draft_calls += 1;
                q = probe;
            }
        }

        // One batched target pass over positions n..=n+gamma.
        let gamma = proposed.len();
        let p_dists: Vec<Distribution> = (0..=gamma).map(|j| target.next_distribution(&out[..n + j])).collect();

        let mut accepted = 0;
        let mut correction = None;
        for j in 0..gamma {
            let ok = match mode {
                DecodeMode::Sampling => verify_sampling(&p_dists[j], &q_dists[j], proposed[j], rng)?,
                DecodeMode::Greedy => verify_greedy(&p_dists[j], proposed[j]),
            };
            if ok {
                accepted += 1;
            } else {
                correction = Some(match mode {
                    DecodeMode::Sampling => correct_with_rule(&p_dists[j], &q_dists[j], rule, rng)?,
                    DecodeMode::Greedy => correct_greedy(&p_dists[j]),
                });
                break;
            }
        }

        out.truncate(n + accepted);
        let bonus = match correction {
            Some(c) => {
                out.push(c);
                None
            }
            None => {
                let b = draw(&p_dists[gamma], mode, rng);
                out.push(b);
                Some(b)
            }
        };
        if gamma > 0 {
            policy.on_round_end(gamma, accepted, correction.is_none());
        }
        rounds.push(RoundRecord {
            round_index: rounds.len(),
            context_start: n,
            proposed_tokens: proposed,
            draft_entropies: entropies,
            next_entropy,
            stop,
            policy_target,
            accepted_count: accepted,
            correction,
            bonus,
        });
    }

    Ok(DecodeResult {
        prompt_len: prompt.len(),
        output_tokens: out,
        target_forward_calls: rounds.len(),
        rounds,
        draft_forward_calls: draft_calls,
        draft_probe_calls: probe_calls,
    })
}

/// Target-only decoding, one token per step.
pub fn autoregressive_decode<T: AutoregressiveModel + ?Sized>(
    target: &T,
    prompt: &[TokenId],
    max_len: usize,
    mode: DecodeMode,
    rng: &mut SessionRng,
) -> Vec<TokenId> {
    let mut out = prompt.to_vec();
    while out.len() < max_len {
        let d = target.next_distribution(&out);
        out.push(draw(&d, mode, rng));
    }
    out
}

/// Probability of `continuation` after `prompt` under chain-rule sampling.
pub fn sequence_probability<T: AutoregressiveModel + ?Sized>(target: &T, prompt: &[TokenId], continuation: &[TokenId]) -> f64 {
    let mut ctx = prompt.to_vec();
    let mut prob = 1.0;
    for &t in continuation {
        prob *= target.next_distribution(&ctx).prob(t);
        ctx.push(t);
    }
    prob
}

/// Expected per-token acceptance under sampling verification, `Σ min(p, q)`.
pub fn expected_acceptance(p: &Distribution, q: &Distribution) -> f64 {
    1.0 - dist::tvd(p, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{temper, ModelSpec, RowSpec, TabularModel};
    use crate::policies::{constant_policy, heuristic_policy, svip_policy, ConstantPolicy, SvipConfig};
    use alloc::vec;

    fn d(v: &[f64]) -> Distribution {
        Distribution::new(v.to_vec()).unwrap()
    }

    fn random_pair(seed: u64, vocab: usize, order: usize) -> (TabularModel, TabularModel) {
        let mut rng = SessionRng::new(seed);
        let target = TabularModel::from_fn(vocab, order, |_| Distribution::random_simplex(vocab, &mut rng).sharpened(2.0));
        let draft = TabularModel::from_fn(vocab, order, |_| Distribution::random_simplex(vocab, &mut rng));
        (target, draft)
    }

    #[test]
    fn verify_sampling_examples() {
        let mut rng = SessionRng::new(1);
        let p = d(&[0.6, 0.4]);
        let q = d(&[0.3, 0.7]);
        for _ in 0..1000 {
            assert!(verify_sampling(&p, &q, TokenId(0), &mut rng).unwrap());
        }
        let p0 = d(&[0.0, 1.0]);
        for _ in 0..1000 {
            assert!(!verify_sampling(&p0, &q, TokenId(0), &mut rng).unwrap());
        }
        let n = 100_000;
        let (p, q) = (d(&[0.2, 0.8]), d(&[0.4, 0.6]));
        let acc = (0..n).filter(|_| verify_sampling(&p, &q, TokenId(0), &mut rng).unwrap()).count();
        let f = acc as f64 / n as f64;
        assert!((0.494..=0.506).contains(&f), "{f}");
        assert_eq!(verify_sampling(&p, &d(&[0.0, 1.0]), TokenId(0), &mut rng), Err(EngineError::ImpossibleDraftToken(TokenId(0))));
    }

    #[test]
    fn verify_and_correct_greedy() {
        assert!(verify_greedy(&d(&[0.1, 0.9]), TokenId(1)));
        assert!(!verify_greedy(&d(&[0.1, 0.9]), TokenId(0)));
        assert!(verify_greedy(&d(&[0.5, 0.5]), TokenId(0)));
        assert_eq!(correct_greedy(&d(&[0.1, 0.7, 0.2])), TokenId(1));
        assert_eq!(correct_greedy(&d(&[1.0, 0.0])), TokenId(0));
        assert_eq!(correct_greedy(&d(&[0.5, 0.5])), TokenId(0));
    }

    #[test]
    fn correct_sampling_examples() {
        let mut rng = SessionRng::new(4);
        for _ in 0..200 {
            assert_eq!(correct_sampling(&d(&[0.5, 0.5]), &d(&[0.9, 0.1]), &mut rng).unwrap(), TokenId(1));
            assert_eq!(correct_sampling(&d(&[0.6, 0.3, 0.1]), &d(&[0.2, 0.5, 0.3]), &mut rng).unwrap(), TokenId(0));
        }
        let p = d(&[0.3, 0.7]);
        assert_eq!(correct_sampling(&p, &p, &mut rng), Err(EngineError::Dist(DistError::DegenerateResidual)));
    }

    #[test]
    fn identical_models_accept_everything() {
        let (target, _) = random_pair(9, 5, 1);
        let mut rng = SessionRng::new(10);
        let mut policy = constant_policy(5).unwrap();
        let res = speculative_decode(&target, &target, &[TokenId(0)], 80, &mut policy, DecodeMode::Sampling, &mut rng).unwrap();
        assert!(res.is_consistent());
        assert!(res.rounds.iter().all(|r| r.all_accepted()));
        assert_eq!(res.output_tokens.len(), 80);
    }

    #[test]
    fn greedy_matches_target_greedy() {
        for seed in 0..20 {
            let (target, draft) = random_pair(seed, 6, 1);
            let prompt = [TokenId(seed as usize % 6)];
            let reference = autoregressive_decode(&target, &prompt, 50, DecodeMode::Greedy, &mut SessionRng::new(0));
            let mut policies: Vec<alloc::boxed::Box<dyn LengthPolicy>> = vec![
                alloc::boxed::Box::new(constant_policy(5).unwrap()),
                alloc::boxed::Box::new(heuristic_policy(5, 40).unwrap()),
                alloc::boxed::Box::new(svip_policy(SvipConfig::default()).unwrap()),
            ];
            for p in policies.iter_mut() {
                let res = speculative_decode(&target, &draft, &prompt, 50, p, DecodeMode::Greedy, &mut SessionRng::new(seed)).unwrap();
                assert_eq!(res.output_tokens, reference);
                assert!(res.is_consistent());
            }
        }
    }

    #[test]
    fn errors() {
        let (target, _) = random_pair(1, 4, 1);
        let (small, _) = random_pair(1, 3, 1);
        let mut rng = SessionRng::new(0);
        let mut p = constant_policy(3).unwrap();
        assert!(matches!(
            speculative_decode(&target, &small, &[TokenId(0)], 10, &mut p, DecodeMode::Sampling, &mut rng),
            Err(EngineError::ModelPairMismatch { target: 4, draft: 3 })
        ));
        assert_eq!(speculative_decode(&target, &target, &[], 10, &mut p, DecodeMode::Sampling, &mut rng), Err(EngineError::EmptyPrompt));
        assert!(matches!(
            speculative_decode(&target, &target, &[TokenId(0), TokenId(1)], 2, &mut p, DecodeMode::Sampling, &mut rng),
            Err(EngineError::HorizonTooShort { .. })
        ));

        struct Broken;
        impl LengthPolicy for Broken {
            fn max_len(&self) -> usize {
                0
            }
            fn should_continue(&mut self, _: usize, _: f64) -> bool {
                true
            }
            fn on_round_end(&mut self, _: usize, _: usize, _: bool) {}
        }
        assert!(matches!(
            speculative_decode(&target, &target, &[TokenId(0)], 10, &mut Broken, DecodeMode::Sampling, &mut rng),
            Err(EngineError::PolicyContract(_))
        ));
    }

    #[test]
    fn final_round_truncated_to_budget() {
        let (target, draft) = random_pair(5, 4, 1);
        let mut p = ConstantPolicy::with_cap(5, 40).unwrap();
        let res = speculative_decode(&target, &target, &[TokenId(0)], 9, &mut p, DecodeMode::Sampling, &mut SessionRng::new(1)).unwrap();
        // 1 + 6 (5 proposed + bonus) leaves 2: one proposal plus its bonus.
        let lens: Vec<usize> = res.rounds.iter().map(|r| r.proposed()).collect();
        assert_eq!(lens, vec![5, 1]);
        assert_eq!(res.rounds[1].stop, StopReason::Budget);
        let res = speculative_decode(&target, &draft, &[TokenId(0)], 2, &mut p, DecodeMode::Sampling, &mut SessionRng::new(1)).unwrap();
        assert_eq!(res.rounds.len(), 1);
        assert_eq!(res.rounds[0].proposed(), 0);
        assert!(res.rounds[0].bonus.is_some());
        assert!(res.is_consistent());
    }

    #[test]
    fn accounting_and_round_structure() {
        for seed in 0..10 {
            let (target, base) = random_pair(seed, 5, 1);
            let draft = temper(&base, 1.5, 0.1).unwrap();
            let mut p = svip_policy(SvipConfig { h: 1.0, max_len: 40 }).unwrap();
            let res = speculative_decode(&target, &draft, &[TokenId(1)], 120, &mut p, DecodeMode::Sampling, &mut SessionRng::new(seed)).unwrap();
            assert!(res.is_consistent());
            assert_eq!(res.output_tokens.len(), 120);
            for r in &res.rounds {
                if r.stop == StopReason::Policy {
                    assert!(libm::sqrt(r.next_entropy.unwrap()) > 1.0);
                }
            }
        }
    }

    #[test]
    fn decode_is_deterministic() {
        let (target, draft) = random_pair(3, 5, 1);
        let run = || {
            let mut p = heuristic_policy(5, 40).unwrap();
            speculative_decode(&target, &draft, &[TokenId(2)], 60, &mut p, DecodeMode::Sampling, &mut SessionRng::new(42)).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn autoregressive_examples() {
        let spec = ModelSpec {
            vocab_size: 3,
            context_order: 1,
            rows: vec![
                RowSpec { context: vec![], probs: vec![0.0, 1.0, 0.0] },
                RowSpec { context: vec![0], probs: vec![0.0, 1.0, 0.0] },
                RowSpec { context: vec![1], probs: vec![0.0, 0.0, 1.0] },
                RowSpec { context: vec![2], probs: vec![1.0, 0.0, 0.0] },
            ],
            default: None,
        };
        let m = TabularModel::from_spec(&spec).unwrap();
        let out = autoregressive_decode(&m, &[TokenId(0)], 5, DecodeMode::Sampling, &mut SessionRng::new(3));
        assert_eq!(out, vec![TokenId(0), TokenId(1), TokenId(2), TokenId(0), TokenId(1)]);

        let coin = TabularModel::from_spec(&ModelSpec { vocab_size: 2, context_order: 0, rows: vec![RowSpec { context: vec![], probs: vec![0.3, 0.7] }], default: None }).unwrap();
        let mut rng = SessionRng::new(17);
        let n = 100_000;
        let ones = (0..n).filter(|_| autoregressive_decode(&coin, &[TokenId(0)], 2, DecodeMode::Sampling, &mut rng)[1] == TokenId(1)).count();
        let f = ones as f64 / n as f64;
        assert!((0.694..=0.706).contains(&f), "{f}");
    }
}
