//! The five subcommands. Each returns the files it wants written and a
//! short human summary; the binary does the writing.

use serde::{Deserialize, Serialize};

use svip_core::bounds::{
    bound_report, fit_gamma_ratio, gamma_validity_prob, gaussian_validity_prob, GammaFit, Validity,
};
use svip_core::dist::{normalize, Distribution};
use svip_core::engine::{speculative_decode, DecodeResult, ResidualRule};
use svip_core::harness::{
    autoregressive_tvd, equivalence_test, mean_var, oracle_length_stats, run_experiment, session_rng,
    EquivalenceConfig, EquivalenceOutcome, ExperimentReport, ExperimentSummary, OracleStats,
};
use svip_core::models::{apply_temperature, enumerate_contexts};
use svip_core::{AutoregressiveModel, SessionRng};

use crate::config::{BoundsSection, LoadedConfig, PairSource, RunConfig};
use crate::error::LabError;
use crate::format::{self, num, opt_num, Table, ROUND_COLUMNS};
use crate::io::{self, SharedModel};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Default)]
pub struct Output {
    /// `(file name, bytes)`, written under the output directory.
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: Vec<String>,
    /// Set when an equivalence verdict failed.
    pub failed: bool,
}

impl Output {
    fn file(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }
}

struct Pair {
    target: SharedModel,
    draft: SharedModel,
}

fn load_pair(cfg: &LoadedConfig) -> Result<Pair, LabError> {
    let target = io::load_target(cfg)?;
    let draft = io::load_draft(cfg, &target)?;
    Ok(Pair { target, draft })
}

fn checked_prompts(cfg: &LoadedConfig, vocab: usize) -> Result<Vec<Vec<svip_core::TokenId>>, LabError> {
    let prompts = cfg.prompts()?;
    if prompts.is_empty() {
        return Err(LabError::config("prompts", "must be non-empty"));
    }
    for (i, p) in prompts.iter().enumerate() {
        if p.is_empty() {
            return Err(LabError::config(format!("prompts[{i}]"), "needs at least one token"));
        }
        if let Some(t) = p.iter().find(|t| t.0 >= vocab) {
            return Err(LabError::config(format!("prompts[{i}]"), format!("token {t} outside vocabulary {vocab}")));
        }
    }
    Ok(prompts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRun {
    pub policy: String,
    pub seed: u64,
    pub prompt_index: usize,
    pub result: DecodeResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeDocument {
    pub tool_version: String,
    pub config: RunConfig,
    pub runs: Vec<DecodeRun>,
}

pub fn decode(cfg: &LoadedConfig, fmt: Format) -> Result<Output, LabError> {
    let pair = load_pair(cfg)?;
    let prompts = checked_prompts(cfg, pair.target.vocab_size())?;
    let c = &cfg.config;
    let mut runs = Vec::new();
    for spec in &c.policies {
        for &seed in &c.seeds {
            for (pi, prompt) in prompts.iter().enumerate() {
                let mut policy = spec.build()?;
                let mut rng = session_rng(seed, pi);
                let result = speculative_decode(
                    &*pair.target,
                    &*pair.draft,
                    prompt,
                    prompt.len() + c.horizon,
                    &mut policy,
                    c.mode,
                    &mut rng,
                )?;
                runs.push(DecodeRun { policy: spec.label(), seed, prompt_index: pi, result });
            }
        }
    }
    let mut out = Output::default();
    out.summary.push(format!("decoded {} sessions", runs.len()));
    match fmt {
        Format::Json => {
            let doc = DecodeDocument { tool_version: TOOL_VERSION.into(), config: c.clone(), runs };
            out.file("decode.json", format::json(&doc));
        }
        Format::Csv => {
            let mut tokens = Table::new(&["policy", "seed", "prompt_index", "tokens"])?;
            let mut header = vec!["policy", "seed", "prompt_index"];
            header.extend(ROUND_COLUMNS);
            let mut rounds = Table::new(&header)?;
            for run in &runs {
                let key = [run.policy.clone(), run.seed.to_string(), run.prompt_index.to_string()];
                tokens.row(key.iter().cloned().chain([format::tokens(&run.result.output_tokens)]))?;
                for r in &run.result.rounds {
                    rounds.row(key.iter().cloned().chain(format::round_fields(r)))?;
                }
            }
            out.file("decode_tokens.csv", tokens.finish()?);
            out.file("decode_rounds.csv", rounds.finish()?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub tool_version: String,
    pub config: RunConfig,
    pub report: ExperimentReport,
}

const SUMMARY_COLUMNS: [&str; 16] = [
    "policy",
    "rounds",
    "accept_rate",
    "proposed_mean",
    "proposed_var",
    "accepted_mean",
    "accepted_var",
    "mean_delta_to_oracle",
    "mean_abs_delta_to_oracle",
    "entropy_accepted",
    "entropy_rejected",
    "kl_at_rejection",
    "generated_tokens",
    "target_forward_calls",
    "draft_forward_calls",
    "estimated_speedup",
];

fn summary_fields(label: &str, s: &ExperimentSummary) -> Vec<String> {
    vec![
        label.to_string(),
        s.rounds.to_string(),
        num(s.accept_rate),
        num(s.proposed_mean),
        num(s.proposed_var),
        num(s.accepted_mean),
        num(s.accepted_var),
        opt_num(s.mean_delta_to_oracle),
        opt_num(s.mean_abs_delta_to_oracle),
        opt_num(s.entropy.accepted_mean),
        opt_num(s.entropy.rejected_mean),
        opt_num(s.kl_trace.first().copied().flatten()),
        s.generated_tokens.to_string(),
        s.target_forward_calls.to_string(),
        s.draft_forward_calls.to_string(),
        num(s.estimated_speedup),
    ]
}

/// One report per configured policy, all on the same seeds and prompts.
pub fn experiment(cfg: &LoadedConfig, fmt: Format) -> Result<Output, LabError> {
    let pair = load_pair(cfg)?;
    let prompts = checked_prompts(cfg, pair.target.vocab_size())?;
    let mut out = Output::default();
    let mut summaries = Vec::new();
    for spec in &cfg.config.policies {
        let exp = cfg.experiment(*spec, &prompts);
        let report = run_experiment(&*pair.target, &*pair.draft, &exp)?;
        let label = report.policy_label.clone();

        let mut header = vec!["seed", "prompt_index"];
        header.extend(ROUND_COLUMNS);
        header.push("oracle_length");
        let mut rounds = Table::new(&header)?;
        for s in &report.sessions {
            for (r, oracle) in s.result.rounds.iter().zip(&s.oracle_lengths) {
                rounds.row(
                    [s.seed.to_string(), s.prompt_index.to_string()]
                        .into_iter()
                        .chain(format::round_fields(r))
                        .chain([oracle.to_string()]),
                )?;
            }
        }
        out.file(format!("experiment_{label}_rounds.csv"), rounds.finish()?);
        out.summary.push(format!(
            "{label}: accept_rate {} speedup {} mean delta {}",
            num(report.summary.accept_rate),
            num(report.summary.estimated_speedup),
            opt_num(report.summary.mean_delta_to_oracle)
        ));
        summaries.push((label.clone(), report.summary.clone()));
        let doc = ReportDocument { tool_version: TOOL_VERSION.into(), config: cfg.config.clone(), report };
        out.file(format!("experiment_{label}.json"), format::json(&doc));
    }
    match fmt {
        Format::Csv => {
            let mut t = Table::new(&SUMMARY_COLUMNS)?;
            for (label, s) in &summaries {
                t.row(summary_fields(label, s))?;
            }
            out.file("experiment_summary.csv", t.finish()?);
        }
        Format::Json => {
            let rows: Vec<_> = summaries.into_iter().map(|(policy, summary)| SummaryRow { policy, summary }).collect();
            out.file("experiment_summary.json", format::json(&rows));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: String,
    pub summary: ExperimentSummary,
}

/// A bound table row; non-finite values become `None` so JSON stays valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub beta: f64,
    pub pinsker: Option<f64>,
    /// One per configured `c`, in config order.
    pub approx: Vec<f64>,
    pub bh: f64,
    pub tvd: f64,
    pub kl_q_p: Option<f64>,
    pub h_q: f64,
    pub h_qp: Option<f64>,
    pub gamma_ratio: Option<f64>,
    pub valid: Vec<Validity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValiditySummary {
    pub c: f64,
    pub valid_fraction: f64,
    /// Valid pairs where the approximation bound exceeded the Pinsker bound.
    pub approx_violations: usize,
    pub gamma_fit: Option<GammaFit>,
    pub gamma_validity_prob: Option<f64>,
    pub gaussian_validity_prob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsSummary {
    pub tool_version: String,
    pub pairs: usize,
    pub finite_kl_pairs: usize,
    pub pinsker_violations: usize,
    pub bh_violations: usize,
    pub mean_pinsker_gap: Option<f64>,
    pub mean_bh_gap: Option<f64>,
    /// `1 - mean_pinsker_gap / mean_bh_gap`.
    pub pinsker_tightness: Option<f64>,
    pub undefined_ratio_pairs: usize,
    pub per_c: Vec<ValiditySummary>,
}

const BOUND_TOL: f64 = 1e-12;

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn random_pairs(b: &BoundsSection) -> Vec<(Distribution, Distribution)> {
    let mut rng = SessionRng::new(b.seed);
    (0..b.pairs)
        .map(|_| {
            let vocab = b.vocab_min + rng.below(b.vocab_max - b.vocab_min + 1);
            let p = Distribution::random_simplex(vocab, &mut rng);
            let q = if rng.uniform() < b.far_fraction {
                Distribution::random_simplex(vocab, &mut rng)
            } else {
                let tau = 0.5 + 2.5 * rng.uniform();
                let eps = 0.3 * rng.uniform();
                let t = apply_temperature(&p, tau);
                let w: Vec<f64> = t.probs().iter().map(|&x| (1.0 - eps) * x + eps / vocab as f64).collect();
                normalize(&w).expect("positive mixture")
            };
            (p, q)
        })
        .collect()
}

fn model_pairs(cfg: &LoadedConfig) -> Result<Vec<(Distribution, Distribution)>, LabError> {
    let pair = load_pair(cfg)?;
    let (t, d) = (&*pair.target, &*pair.draft);
    let order = t.context_order().max(d.context_order());
    Ok(enumerate_contexts(t.vocab_size(), order).iter().map(|ctx| (t.next_distribution(ctx), d.next_distribution(ctx))).collect())
}

/// Bound table for a set of `(p, q)` pairs, rows sorted by actual acceptance.
pub fn bounds_table(pairs: &[(Distribution, Distribution)], cs: &[f64]) -> Result<(Vec<BoundRow>, BoundsSummary), LabError> {
    let mut rows = Vec::with_capacity(pairs.len());
    let (mut p_gaps, mut bh_gaps) = (Vec::new(), Vec::new());
    let (mut p_viol, mut bh_viol) = (0, 0);
    let mut ratios = Vec::new();
    let mut approx_viol = vec![0usize; cs.len()];
    let mut valid_count = vec![0usize; cs.len()];
    for (p, q) in pairs {
        let reports: Vec<_> = cs.iter().map(|&c| bound_report(p, q, c)).collect();
        let r = reports[0];
        if r.kl_q_p.is_finite() {
            p_gaps.push(r.beta - r.pinsker);
            bh_gaps.push(r.beta - r.bh);
            p_viol += usize::from(r.pinsker > r.beta + BOUND_TOL);
            bh_viol += usize::from(r.bh > r.beta + BOUND_TOL);
        }
        if let Some(g) = r.gamma_ratio {
            ratios.push(g);
        }
        for (i, rep) in reports.iter().enumerate() {
            if rep.validity.is_valid() {
                valid_count[i] += 1;
                if rep.h_q > 0.0 && rep.approx > rep.pinsker + BOUND_TOL {
                    approx_viol[i] += 1;
                }
            }
        }
        rows.push(BoundRow {
            beta: r.beta,
            pinsker: finite(r.pinsker),
            approx: reports.iter().map(|x| x.approx).collect(),
            bh: r.bh,
            tvd: r.tvd,
            kl_q_p: finite(r.kl_q_p),
            h_q: r.h_q,
            h_qp: finite(r.h_qp),
            gamma_ratio: r.gamma_ratio.and_then(finite),
            valid: reports.iter().map(|x| x.validity).collect(),
        });
    }
    rows.sort_by(|a, b| a.beta.total_cmp(&b.beta));

    let fit = fit_gamma_ratio(&ratios).ok();
    let finite_ratios: Vec<f64> = ratios.iter().copied().filter(|g| g.is_finite()).collect();
    let moments = mean_var(&finite_ratios);
    let mut per_c = Vec::with_capacity(cs.len());
    for (i, &c) in cs.iter().enumerate() {
        let gamma_prob = match fit {
            Some(f) => Some(gamma_validity_prob(f.alpha, f.beta_rate, c)?),
            None => None,
        };
        let gaussian_prob = match moments {
            Some((mu, var)) if var > 0.0 => Some(gaussian_validity_prob(mu, var.sqrt(), c)?),
            _ => None,
        };
        per_c.push(ValiditySummary {
            c,
            valid_fraction: if pairs.is_empty() { 0.0 } else { valid_count[i] as f64 / pairs.len() as f64 },
            approx_violations: approx_viol[i],
            gamma_fit: fit,
            gamma_validity_prob: gamma_prob,
            gaussian_validity_prob: gaussian_prob,
        });
    }
    let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let (mp, mb) = (mean(&p_gaps), mean(&bh_gaps));
    let tightness = match (mp, mb) {
        (Some(p), Some(b)) if b > 0.0 => Some(1.0 - p / b),
        _ => None,
    };
    let summary = BoundsSummary {
        tool_version: TOOL_VERSION.into(),
        pairs: pairs.len(),
        finite_kl_pairs: p_gaps.len(),
        pinsker_violations: p_viol,
        bh_violations: bh_viol,
        mean_pinsker_gap: mp,
        mean_bh_gap: mb,
        pinsker_tightness: tightness,
        undefined_ratio_pairs: pairs.len() - ratios.len(),
        per_c,
    };
    Ok((rows, summary))
}

pub fn bounds_eval(cfg: &LoadedConfig, fmt: Format) -> Result<Output, LabError> {
    let section = cfg.config.bounds.clone().unwrap_or_default();
    let pairs = match section.source {
        PairSource::Random => random_pairs(&section),
        PairSource::Model => model_pairs(cfg)?,
    };
    let (rows, summary) = bounds_table(&pairs, &section.c)?;
    let mut out = Output::default();
    out.summary.push(format!(
        "{} pairs, pinsker violations {}, bh violations {}, pinsker tightness {}",
        summary.pairs,
        summary.pinsker_violations,
        summary.bh_violations,
        opt_num(summary.pinsker_tightness)
    ));
    match fmt {
        Format::Csv => {
            let mut header: Vec<String> = vec!["beta".into(), "pinsker".into()];
            header.extend(section.c.iter().map(|c| format!("approx_c{c}")));
            header.extend(["bh", "tvd", "kl_q_p", "h_q", "h_qp", "gamma_ratio"].map(String::from));
            header.extend(section.c.iter().map(|c| format!("valid_c{c}")));
            let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
            let mut t = Table::new(&header_refs)?;
            for r in &rows {
                let mut f = vec![num(r.beta), opt_num(r.pinsker)];
                f.extend(r.approx.iter().map(|&a| num(a)));
                f.extend([num(r.bh), num(r.tvd), opt_num(r.kl_q_p), num(r.h_q), opt_num(r.h_qp), opt_num(r.gamma_ratio)]);
                f.extend(r.valid.iter().map(|v| validity_label(*v).to_string()));
                t.row(f)?;
            }
            out.file("bounds.csv", t.finish()?);
        }
        Format::Json => out.file("bounds.json", format::json(&rows)),
    }
    out.file("bounds_summary.json", format::json(&summary));
    Ok(out)
}

fn validity_label(v: Validity) -> &'static str {
    match v {
        Validity::Holds => "holds",
        Validity::Violated => "violated",
        Validity::UndefinedRatio => "undefined",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceRow {
    pub policy: String,
    pub residual: ResidualRule,
    pub outcome: EquivalenceOutcome,
    /// The same statistic for plain target sampling: the noise floor.
    pub autoregressive_tvd: f64,
}

/// Exact-enumeration check that every policy preserves the target's output
/// distribution. Any failed verdict sets [`Output::failed`].
pub fn equivalence(cfg: &LoadedConfig, fmt: Format) -> Result<Output, LabError> {
    let pair = load_pair(cfg)?;
    let vocab = pair.target.vocab_size();
    let prompts = checked_prompts(cfg, vocab)?;
    let section = cfg.config.equivalence.clone().unwrap_or_default();
    let prompt = &prompts[0];
    let seed = cfg.config.seeds[0];
    let eq: Vec<EquivalenceConfig> = cfg
        .config
        .policies
        .iter()
        .map(|&policy| EquivalenceConfig {
            policy,
            residual: section.residual,
            horizon: section.horizon,
            n_samples: section.n_samples,
            threshold: section.threshold,
        })
        .collect();
    // Validate everything before sampling anything.
    for e in &eq {
        e.validate(vocab)?;
    }
    let floor = autoregressive_tvd(&*pair.target, prompt, section.horizon, section.n_samples, &mut SessionRng::derived(seed, &[u64::MAX]));
    let mut rows = Vec::with_capacity(eq.len());
    for (i, e) in eq.iter().enumerate() {
        let mut rng = SessionRng::derived(seed, &[i as u64]);
        let outcome = equivalence_test(&*pair.target, &*pair.draft, e, prompt, &mut rng)?;
        rows.push(EquivalenceRow { policy: e.policy.label(), residual: e.residual, outcome, autoregressive_tvd: floor });
    }
    let mut out = Output::default();
    for r in &rows {
        out.summary.push(format!(
            "{}: tvd {} threshold {} {}",
            r.policy,
            num(r.outcome.tvd),
            num(r.outcome.threshold),
            if r.outcome.passed { "PASS" } else { "FAIL" }
        ));
    }
    out.failed = rows.iter().any(|r| !r.outcome.passed);
    match fmt {
        Format::Csv => {
            let mut t = Table::new(&[
                "policy",
                "residual",
                "tvd",
                "autoregressive_tvd",
                "threshold",
                "passed",
                "n_sequences",
                "n_samples",
            ])?;
            for r in &rows {
                t.row([
                    r.policy.clone(),
                    residual_label(r.residual).into(),
                    num(r.outcome.tvd),
                    num(r.autoregressive_tvd),
                    num(r.outcome.threshold),
                    r.outcome.passed.to_string(),
                    r.outcome.n_sequences.to_string(),
                    r.outcome.n_samples.to_string(),
                ])?;
            }
            out.file("equivalence.csv", t.finish()?);
        }
        Format::Json => out.file("equivalence.json", format::json(&rows)),
    }
    Ok(out)
}

fn residual_label(r: ResidualRule) -> &'static str {
    match r {
        ResidualRule::TargetMinusDraft => "target_minus_draft",
        ResidualRule::DraftMinusTarget => "draft_minus_target",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub seed: u64,
    pub stats: OracleStats,
}

pub fn oracle_stats(cfg: &LoadedConfig, fmt: Format) -> Result<Output, LabError> {
    let pair = load_pair(cfg)?;
    let prompts = checked_prompts(cfg, pair.target.vocab_size())?;
    let runs = cfg.config.oracle_stats.clone().unwrap_or_default().runs;
    let mut rows = Vec::new();
    for &seed in &cfg.config.seeds {
        let mut rng = SessionRng::new(seed);
        let stats = oracle_length_stats(&*pair.target, &*pair.draft, &prompts, cfg.config.mode, &mut rng, cfg.config.oracle_cap, runs)?;
        rows.push(OracleRow { seed, stats });
    }
    let mut out = Output::default();
    for r in &rows {
        out.summary.push(format!("seed {}: mean {} variance {}", r.seed, num(r.stats.mean), num(r.stats.variance)));
    }
    match fmt {
        Format::Csv => {
            let mut t = Table::new(&["seed", "mean", "variance", "samples"])?;
            let mut h = Table::new(&["seed", "length", "count"])?;
            for r in &rows {
                t.row([r.seed.to_string(), num(r.stats.mean), num(r.stats.variance), r.stats.samples.to_string()])?;
                for (len, count) in r.stats.histogram.iter().enumerate() {
                    h.row([r.seed.to_string(), len.to_string(), count.to_string()])?;
                }
            }
            out.file("oracle_stats.csv", t.finish()?);
            out.file("oracle_histogram.csv", h.finish()?);
        }
        Format::Json => out.file("oracle_stats.json", format::json(&rows)),
    }
    Ok(out)
}

