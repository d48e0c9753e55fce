//! Run configuration documents.
//!
//! A config is a single JSON document. Relative paths inside it resolve
//! against the directory holding the config file, so a config and its model
//! files can move together.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use svip_core::harness::{CostModel, ExperimentConfig, DEFAULT_EQUIVALENCE_THRESHOLD, DEFAULT_KL_WINDOW};
use svip_core::models::PhraseParams;
use svip_core::{DecodeMode, PolicySpec, TokenId};

use crate::error::LabError;
use crate::io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSource {
    /// Model-spec JSON file.
    Spec(PathBuf),
    /// Whitespace-separated token corpus counted into an n-gram model.
    Ngram { corpus: PathBuf, vocab_size: usize, order: usize, k_add: f64 },
    /// Phrase-structured synthetic target.
    Phrase {
        vocab_size: usize,
        continue_prob: f64,
        head_mass: f64,
        #[serde(default = "default_tail_scale")]
        tail_scale: f64,
        seed: u64,
    },
}

fn default_tail_scale() -> f64 {
    1e-8
}

impl TargetSource {
    pub fn phrase_params(&self) -> Option<(PhraseParams, u64)> {
        match *self {
            TargetSource::Phrase { vocab_size, continue_prob, head_mass, tail_scale, seed } => {
                Some((PhraseParams { vocab_size, continue_prob, head_mass, tail_scale }, seed))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DraftSource {
    Spec(PathBuf),
    /// `temper(target, tau, epsilon)`.
    Temper { tau: f64, epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PromptSource {
    Inline(Vec<Vec<TokenId>>),
    /// One prompt per non-empty line of whitespace-separated token ids.
    File { file: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSource {
    /// Dirichlet(1) `p`, with `q` either independent or a tempered `p`.
    Random,
    /// One pair per context of the configured target and draft.
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    #[serde(default = "default_pair_source")]
    pub source: PairSource,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "default_vocab_min")]
    pub vocab_min: usize,
    #[serde(default = "default_vocab_max")]
    pub vocab_max: usize,
    /// Share of random pairs whose `q` is drawn independently of `p`.
    #[serde(default = "default_far_fraction")]
    pub far_fraction: f64,
    #[serde(default = "default_c")]
    pub c: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_pair_source() -> PairSource {
    PairSource::Random
}
fn default_pairs() -> usize {
    1000
}
fn default_vocab_min() -> usize {
    2
}
fn default_vocab_max() -> usize {
    64
}
fn default_far_fraction() -> f64 {
    0.5
}
fn default_c() -> Vec<f64> {
    vec![0.18]
}

impl Default for BoundsSection {
    fn default() -> Self {
        BoundsSection {
            source: default_pair_source(),
            pairs: default_pairs(),
            vocab_min: default_vocab_min(),
            vocab_max: default_vocab_max(),
            far_fraction: default_far_fraction(),
            c: default_c(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquivalenceSection {
    #[serde(default = "default_eq_horizon")]
    pub horizon: usize,
    #[serde(default = "default_eq_samples")]
    pub n_samples: usize,
    #[serde(default = "default_eq_threshold")]
    pub threshold: f64,
    /// Correction orientation; only changed for negative controls.
    #[serde(default)]
    pub residual: svip_core::engine::ResidualRule,
}

fn default_eq_horizon() -> usize {
    3
}
fn default_eq_samples() -> usize {
    200_000
}
fn default_eq_threshold() -> f64 {
    DEFAULT_EQUIVALENCE_THRESHOLD
}

impl Default for EquivalenceSection {
    fn default() -> Self {
        EquivalenceSection {
            horizon: default_eq_horizon(),
            n_samples: default_eq_samples(),
            threshold: default_eq_threshold(),
            residual: Default::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleStatsSection {
    #[serde(default = "default_runs")]
    pub runs: usize,
}

fn default_runs() -> usize {
    1000
}

impl Default for OracleStatsSection {
    fn default() -> Self {
        OracleStatsSection { runs: default_runs() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub target: TargetSource,
    #[serde(default)]
    pub draft: Option<DraftSource>,
    #[serde(default = "default_mode")]
    pub mode: DecodeMode,
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicySpec>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_prompts")]
    pub prompts: PromptSource,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub cost_model: CostModel,
    #[serde(default = "default_oracle_cap")]
    pub oracle_cap: usize,
    #[serde(default = "default_kl_window")]
    pub kl_window: usize,
    #[serde(default)]
    pub bounds: Option<BoundsSection>,
    #[serde(default)]
    pub equivalence: Option<EquivalenceSection>,
    #[serde(default)]
    pub oracle_stats: Option<OracleStatsSection>,
}

fn default_mode() -> DecodeMode {
    DecodeMode::Sampling
}
fn default_policies() -> Vec<PolicySpec> {
    vec![PolicySpec::constant(5), PolicySpec::heuristic(), PolicySpec::svip(0.3)]
}
fn default_horizon() -> usize {
    64
}
fn default_prompts() -> PromptSource {
    PromptSource::Inline(vec![vec![TokenId(0)]])
}
fn default_oracle_cap() -> usize {
    svip_core::DEFAULT_MAX_DRAFT_LEN
}
fn default_kl_window() -> usize {
    DEFAULT_KL_WINDOW
}

/// A parsed config plus the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, LabError> {
        let bytes = io::read(path)?;
        let config: RunConfig =
            serde_json::from_slice(&bytes).map_err(|source| LabError::Parse { path: path.to_path_buf(), source })?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = LoadedConfig { config, base_dir };
        loaded.validate_shape()?;
        Ok(loaded)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Checks that need no model: everything else is validated once the
    /// vocabulary is known.
    fn validate_shape(&self) -> Result<(), LabError> {
        let c = &self.config;
        if c.seeds.is_empty() {
            return Err(LabError::config("seeds", "must be non-empty"));
        }
        if c.policies.is_empty() {
            return Err(LabError::config("policies", "must be non-empty"));
        }
        for (i, p) in c.policies.iter().enumerate() {
            p.validate().map_err(|e| LabError::config(format!("policies[{i}]"), e.to_string()))?;
        }
        if let Some(b) = &c.bounds {
            if b.vocab_min < 2 || b.vocab_min > b.vocab_max {
                return Err(LabError::config("bounds.vocab_min", "need 2 <= vocab_min <= vocab_max"));
            }
            if !(0.0..=1.0).contains(&b.far_fraction) {
                return Err(LabError::config("bounds.far_fraction", "must lie in [0, 1]"));
            }
            if b.c.is_empty() || b.c.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
                return Err(LabError::config("bounds.c", "needs at least one positive value"));
            }
            if b.pairs == 0 && b.source == PairSource::Random {
                return Err(LabError::config("bounds.pairs", "must be at least 1"));
            }
        }
        if let Some(o) = &c.oracle_stats {
            if o.runs == 0 {
                return Err(LabError::config("oracle_stats.runs", "must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn prompts(&self) -> Result<Vec<Vec<TokenId>>, LabError> {
        match &self.config.prompts {
            PromptSource::Inline(p) => Ok(p.clone()),
            PromptSource::File { file } => io::read_prompts(&self.resolve(file)),
        }
    }

    pub fn with_seed_override(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.config.seeds = vec![s];
        }
        self
    }

    pub fn experiment(&self, policy: PolicySpec, prompts: &[Vec<TokenId>]) -> ExperimentConfig {
        let c = &self.config;
        ExperimentConfig {
            policy,
            mode: c.mode,
            horizon: c.horizon,
            prompts: prompts.to_vec(),
            seeds: c.seeds.clone(),
            cost_model: c.cost_model,
            oracle_cap: c.oracle_cap,
            kl_window: c.kl_window,
        }
    }
}
