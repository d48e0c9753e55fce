//! Synthetic autoregressive models standing in for target and draft LLMs.
//!
//! Every model conditions on at most `context_order` trailing tokens.
//! Contexts shorter than the order are left-padded with a begin marker that
//! is never emitted, so a table keyed on padded contexts is total over all
//! prompts without special cases.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{self, normalize, DistError, Distribution, TokenId};
use crate::rng::SessionRng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("vocabulary must be non-empty")]
    EmptyVocabulary,
    #[error("incomplete table: {present} of {expected} contexts present and no default row")]
    IncompleteTable { present: usize, expected: usize },
    #[error("row arity mismatch for context {context:?}: expected {expected} probabilities, got {got}")]
    RowArity { context: Vec<usize>, expected: usize, got: usize },
    #[error("invalid context {context:?}: {reason}")]
    InvalidContext { context: Vec<usize>, reason: &'static str },
    #[error("duplicate context {0:?}")]
    DuplicateContext(Vec<usize>),
    #[error("invalid row for context {context:?}: {source}")]
    InvalidRow { context: Vec<usize>, source: DistError },
    #[error("invalid corpus token {token} at position {position}")]
    InvalidCorpusToken { position: usize, token: usize },
    #[error("invalid n-gram order {0}: must be at least 1")]
    InvalidOrder(usize),
    #[error("invalid smoothing constant {0}: must be positive")]
    InvalidSmoothing(f64),
    #[error("invalid temperature {0}: must be positive")]
    InvalidTemperature(f64),
    #[error("invalid mix {0}: must lie in [0, 1)")]
    InvalidMix(f64),
    #[error("invalid phrase parameter {field}: {reason}")]
    InvalidPhrase { field: &'static str, reason: &'static str },
}

/// Maps a token context to the next-token distribution. Implementations
/// are pure: identical contexts give identical distributions.
pub trait AutoregressiveModel {
    fn vocab_size(&self) -> usize;
    fn context_order(&self) -> usize;
    /// `context` is the whole prefix; only the trailing `context_order`
    /// tokens matter.
    fn next_distribution(&self, context: &[TokenId]) -> Distribution;
}

impl<M: AutoregressiveModel + ?Sized> AutoregressiveModel for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn context_order(&self) -> usize {
        (**self).context_order()
    }
    fn next_distribution(&self, context: &[TokenId]) -> Distribution {
        (**self).next_distribution(context)
    }
}

impl<M: AutoregressiveModel + ?Sized> AutoregressiveModel for Box<M> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn context_order(&self) -> usize {
        (**self).context_order()
    }
    fn next_distribution(&self, context: &[TokenId]) -> Distribution {
        (**self).next_distribution(context)
    }
}

impl<M: AutoregressiveModel + ?Sized> AutoregressiveModel for Arc<M> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn context_order(&self) -> usize {
        (**self).context_order()
    }
    fn next_distribution(&self, context: &[TokenId]) -> Distribution {
        (**self).next_distribution(context)
    }
}

/// Padded key of the trailing `order` tokens; the begin marker is `vocab`.
fn padded_key(context: &[TokenId], order: usize, vocab: usize) -> Vec<usize> {
    let take = context.len().min(order);
    let mut key = Vec::with_capacity(order);
    key.resize(order - take, vocab);
    key.extend(context[context.len() - take..].iter().map(|t| t.0));
    key
}

/// Every distinct conditioning context of a model with the given order:
/// all prefixes of length `0..=order` (shorter ones stand for padded keys).
pub fn enumerate_contexts(vocab: usize, order: usize) -> Vec<Vec<TokenId>> {
    let mut out = alloc::vec![Vec::new()];
    let mut frontier: Vec<Vec<TokenId>> = alloc::vec![Vec::new()];
    for _ in 0..order {
        let mut next = Vec::with_capacity(frontier.len() * vocab);
        for ctx in &frontier {
            for t in 0..vocab {
                let mut c = ctx.clone();
                c.push(TokenId(t));
                next.push(c);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn context_count(vocab: usize, order: usize) -> usize {
    (0..=order).map(|m| vocab.saturating_pow(m as u32)).fold(0usize, |a, b| a.saturating_add(b))
}

/// One row of a model-spec document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSpec {
    pub context: Vec<usize>,
    pub probs: Vec<f64>,
}

/// Structured description of a [`TabularModel`]. Contexts shorter than
/// `context_order` denote begin-padded contexts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub vocab_size: usize,
    pub context_order: usize,
    #[serde(default)]
    pub rows: Vec<RowSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Vec<f64>>,
}

fn row_distribution(weights: &[f64]) -> Result<Distribution, DistError> {
    Distribution::new(weights.to_vec()).or_else(|_| normalize(weights))
}

/// Lookup-table model over padded contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularModel {
    vocab: usize,
    order: usize,
    table: BTreeMap<Vec<usize>, Distribution>,
    default: Option<Distribution>,
}

impl TabularModel {
    /// Builds a model from a spec document. Rows that already sum to 1 are
    /// kept bit-for-bit, so a written spec reloads to an identical model;
    /// other rows are treated as weights and normalized.
    pub fn from_spec(spec: &ModelSpec) -> Result<Self, ModelError> {
        let vocab = spec.vocab_size;
        if vocab == 0 {
            return Err(ModelError::EmptyVocabulary);
        }
        let order = spec.context_order;
        let mut table = BTreeMap::new();
        for row in &spec.rows {
            if row.context.len() > order {
                return Err(ModelError::InvalidContext { context: row.context.clone(), reason: "longer than context_order" });
            }
            if row.context.iter().any(|&t| t >= vocab) {
                return Err(ModelError::InvalidContext { context: row.context.clone(), reason: "token outside vocabulary" });
            }
            if row.probs.len() != vocab {
                return Err(ModelError::RowArity { context: row.context.clone(), expected: vocab, got: row.probs.len() });
            }
            let dist = row_distribution(&row.probs).map_err(|source| ModelError::InvalidRow { context: row.context.clone(), source })?;
            let ctx: Vec<TokenId> = row.context.iter().map(|&t| TokenId(t)).collect();
            if table.insert(padded_key(&ctx, order, vocab), dist).is_some() {
                return Err(ModelError::DuplicateContext(row.context.clone()));
            }
        }
        let default = match &spec.default {
            Some(w) => {
                if w.len() != vocab {
                    return Err(ModelError::RowArity { context: Vec::new(), expected: vocab, got: w.len() });
                }
                Some(row_distribution(w).map_err(|source| ModelError::InvalidRow { context: Vec::new(), source })?)
            }
            None => None,
        };
        let expected = context_count(vocab, order);
        if default.is_none() && table.len() < expected {
            return Err(ModelError::IncompleteTable { present: table.len(), expected });
        }
        Ok(TabularModel { vocab, order, table, default })
    }

    /// Builds a total table by calling `row` once per distinct context.
    pub fn from_fn(vocab: usize, order: usize, mut row: impl FnMut(&[TokenId]) -> Distribution) -> Self {
        assert!(vocab > 0);
        let mut table = BTreeMap::new();
        for ctx in enumerate_contexts(vocab, order) {
            let d = row(&ctx);
            assert_eq!(d.len(), vocab, "row of wrong arity");
            table.insert(padded_key(&ctx, order, vocab), d);
        }
        TabularModel { vocab, order, table, default: None }
    }

    /// Emits an equivalent spec document (explicit rows only).
    pub fn to_spec(&self) -> ModelSpec {
        let rows = self
            .table
            .iter()
            .map(|(key, d)| RowSpec {
                context: key.iter().copied().filter(|&t| t != self.vocab).collect(),
                probs: d.probs().to_vec(),
            })
            .collect();
        ModelSpec {
            vocab_size: self.vocab,
            context_order: self.order,
            rows,
            default: self.default.as_ref().map(|d| d.probs().to_vec()),
        }
    }
}

impl AutoregressiveModel for TabularModel {
    fn vocab_size(&self) -> usize {
        self.vocab
    }
    fn context_order(&self) -> usize {
        self.order
    }
    fn next_distribution(&self, context: &[TokenId]) -> Distribution {
        let key = padded_key(context, self.order, self.vocab);
        match self.table.get(&key) {
            Some(d) => d.clone(),
            None => self.default.clone().expect("table is total by construction"),
        }
    }
}

/// Count-based n-gram model with additive smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    vocab: usize,
    order: usize,
    k_add: f64,
    counts: BTreeMap<Vec<usize>, Vec<u64>>,
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn count(&self, context: &[TokenId], token: TokenId) -> u64 {
        let key = padded_key(context, self.order - 1, self.vocab);
        self.counts.get(&key).map_or(0, |c| c[token.0])
    }
}

/// Counts every n-gram of `corpus`, treating it as one sequence that starts
/// after a begin marker.
pub fn train_ngram(corpus: &[TokenId], vocab: usize, order: usize, k_add: f64) -> Result<NGramModel, ModelError> {
    if vocab == 0 {
        return Err(ModelError::EmptyVocabulary);
    }
    if order == 0 {
        return Err(ModelError::InvalidOrder(order));
    }
    if !(k_add > 0.0 && k_add.is_finite()) {
        return Err(ModelError::InvalidSmoothing(k_add));
    }
    let mut counts: BTreeMap<Vec<usize>, Vec<u64>> = BTreeMap::new();
    for (position, &tok) in corpus.iter().enumerate() {
        if tok.0 >= vocab {
            return Err(ModelError::InvalidCorpusToken { position, token: tok.0 });
        }
        let key = padded_key(&corpus[..position], order - 1, vocab);
        counts.entry(key).or_insert_with(|| alloc::vec![0; vocab])[tok.0] += 1;
    }
    Ok(NGramModel { vocab, order, k_add, counts })
}

impl AutoregressiveModel for NGramModel {
    fn vocab_size(&self) -> usize {
        self.vocab
    }
    fn context_order(&self) -> usize {
        self.order - 1
    }
    fn next_distribution(&self, context: &[TokenId]) -> Distribution {
        let key = padded_key(context, self.order - 1, self.vocab);
        match self.counts.get(&key) {
            Some(c) => {
                let weights: Vec<f64> = c.iter().map(|&n| n as f64 + self.k_add).collect();
                normalize(&weights).expect("smoothed counts are positive")
            }
            None => Distribution::uniform(self.vocab),
        }
    }
}

/// Draft derived from a base model: `(1 - mix) * normalize(base^(1/tau)) + mix * uniform`.
#[derive(Debug, Clone)]
pub struct TemperedDraft<M> {
    base: M,
    temperature: f64,
    mix: f64,
}

pub fn temper<M: AutoregressiveModel>(base: M, temperature: f64, mix: f64) -> Result<TemperedDraft<M>, ModelError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(ModelError::InvalidTemperature(temperature));
    }
    if !(0.0..1.0).contains(&mix) {
        return Err(ModelError::InvalidMix(mix));
    }
    Ok(TemperedDraft { base, temperature, mix })
}

impl<M> TemperedDraft<M> {
    pub fn base(&self) -> &M {
        &self.base
    }
    pub fn temperature(&self) -> f64 {
        self.temperature
    }
    pub fn mix(&self) -> f64 {
        self.mix
    }
}

/// `normalize(d^(1/temperature))` evaluated in log space.
pub fn apply_temperature(d: &Distribution, temperature: f64) -> Distribution {
    if temperature == 1.0 {
        return d.clone();
    }
    let top = d.prob(dist::argmax(d));
    let ln_top = libm::log(top);
    let weights: Vec<f64> = d
        .probs()
        .iter()
        .map(|&p| if p > 0.0 { libm::exp((libm::log(p) - ln_top) / temperature) } else { 0.0 })
        .collect();
    normalize(&weights).expect("argmax weight is 1")
}

impl<M: AutoregressiveModel> AutoregressiveModel for TemperedDraft<M> {
    fn vocab_size(&self) -> usize {
        self.base.vocab_size()
    }
    fn context_order(&self) -> usize {
        self.base.context_order()
    }
    fn next_distribution(&self, context: &[TokenId]) -> Distribution {
        let tempered = apply_temperature(&self.base.next_distribution(context), self.temperature);
        if self.mix == 0.0 {
            return tempered;
        }
        let v = tempered.len() as f64;
        let mixed: Vec<f64> = tempered.probs().iter().map(|&p| (1.0 - self.mix) * p + self.mix / v).collect();
        normalize(&mixed).expect("mixture is positive")
    }
}

/// Parameters of a phrase-structured order-1 target.
///
/// Tokens are laid out along a random permutation and cut into phrases:
/// each link continues the current phrase with probability
/// `continue_prob`. Inside a phrase the next token is near-deterministic
/// (off-token mass of order `tail_scale`). At a phrase boundary the row puts
/// `head_mass` on a random phrase start and spreads the rest over the whole
/// vocabulary, which is where a tempered draft disagrees most.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhraseParams {
    pub vocab_size: usize,
    pub continue_prob: f64,
    pub head_mass: f64,
    #[serde(default = "PhraseParams::default_tail_scale")]
    pub tail_scale: f64,
}

impl PhraseParams {
    fn default_tail_scale() -> f64 {
        1e-8
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |field, reason| Err(ModelError::InvalidPhrase { field, reason });
        if self.vocab_size < 2 {
            return bad("vocab_size", "must be at least 2");
        }
        if !(0.0..1.0).contains(&self.continue_prob) {
            return bad("continue_prob", "must lie in [0, 1)");
        }
        if !(self.head_mass > 0.0 && self.head_mass < 1.0) {
            return bad("head_mass", "must lie in (0, 1)");
        }
        if !(self.tail_scale > 0.0 && self.tail_scale.is_finite()) {
            return bad("tail_scale", "must be positive");
        }
        Ok(())
    }
}

fn shuffle(items: &mut [usize], rng: &mut SessionRng) {
    for i in (1..items.len()).rev() {
        let j = rng.below(i + 1);
        items.swap(i, j);
    }
}

/// Builds a phrase-structured target. The begin context is a boundary row.
pub fn phrase_model(params: &PhraseParams, rng: &mut SessionRng) -> Result<TabularModel, ModelError> {
    params.validate()?;
    let v = params.vocab_size;
    let mut order: Vec<usize> = (0..v).collect();
    shuffle(&mut order, rng);
    let mut successor = alloc::vec![None; v];
    let mut starts = alloc::vec![order[0]];
    for w in order.windows(2) {
        if rng.uniform() < params.continue_prob {
            successor[w[0]] = Some(w[1]);
        } else {
            starts.push(w[1]);
        }
    }
    let boundary_row = |rng: &mut SessionRng| {
        let head = starts[rng.below(starts.len())];
        let tail: Vec<f64> = (0..v).map(|_| rng.exponential()).collect();
        let z: f64 = tail.iter().sum();
        let w: Vec<f64> = (0..v)
            .map(|x| (1.0 - params.head_mass) * tail[x] / z + if x == head { params.head_mass } else { 0.0 })
            .collect();
        normalize(&w).expect("positive weights")
    };
    let mut rows = Vec::with_capacity(v);
    for &next in &successor {
        let row = match next {
            Some(n) => {
                let w: Vec<f64> =
                    (0..v).map(|x| if x == n { 1.0 } else { params.tail_scale * rng.exponential() }).collect();
                normalize(&w).expect("positive weights")
            }
            None => boundary_row(rng),
        };
        rows.push(row);
    }
    let begin = boundary_row(rng);
    Ok(TabularModel::from_fn(v, 1, |ctx| match ctx.last() {
        Some(t) => rows[t.0].clone(),
        None => begin.clone(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::close;
    use alloc::vec;

    fn toks(v: &[usize]) -> Vec<TokenId> {
        v.iter().map(|&t| TokenId(t)).collect()
    }

    fn order0(probs: &[f64]) -> ModelSpec {
        ModelSpec { vocab_size: probs.len(), context_order: 0, rows: vec![RowSpec { context: vec![], probs: probs.to_vec() }], default: None }
    }

    #[test]
    fn order_zero_spec() {
        let m = TabularModel::from_spec(&order0(&[0.3, 0.7])).unwrap();
        for ctx in [vec![], toks(&[0]), toks(&[1, 1, 0])] {
            assert_eq!(m.next_distribution(&ctx).probs(), &[0.3, 0.7]);
        }
    }

    #[test]
    fn spec_rows_are_normalized() {
        let m = TabularModel::from_spec(&order0(&[2.0, 2.0])).unwrap();
        assert_eq!(m.next_distribution(&[]).probs(), &[0.5, 0.5]);
    }

    #[test]
    fn spec_errors() {
        let spec = ModelSpec {
            vocab_size: 2,
            context_order: 1,
            rows: vec![RowSpec { context: vec![0], probs: vec![0.5, 0.5] }, RowSpec { context: vec![], probs: vec![0.5, 0.5] }],
            default: None,
        };
        assert!(matches!(TabularModel::from_spec(&spec), Err(ModelError::IncompleteTable { present: 2, expected: 3 })));

        let mut with_default = spec.clone();
        with_default.default = Some(vec![1.0, 3.0]);
        let m = TabularModel::from_spec(&with_default).unwrap();
        assert_eq!(m.next_distribution(&toks(&[1])).probs(), &[0.25, 0.75]);
        assert_eq!(m.next_distribution(&toks(&[1, 0])).probs(), &[0.5, 0.5]);

        let bad = ModelSpec { rows: vec![RowSpec { context: vec![], probs: vec![1.0] }], ..order0(&[0.5, 0.5]) };
        assert!(matches!(TabularModel::from_spec(&bad), Err(ModelError::RowArity { expected: 2, got: 1, .. })));

        let dup = ModelSpec { rows: vec![RowSpec { context: vec![], probs: vec![1.0, 1.0] }; 2], ..order0(&[0.5, 0.5]) };
        assert!(matches!(TabularModel::from_spec(&dup), Err(ModelError::DuplicateContext(_))));

        let oov = ModelSpec { vocab_size: 2, context_order: 1, rows: vec![RowSpec { context: vec![2], probs: vec![1.0, 1.0] }], default: Some(vec![1.0, 1.0]) };
        assert!(matches!(TabularModel::from_spec(&oov), Err(ModelError::InvalidContext { .. })));
    }

    #[test]
    fn spec_round_trip() {
        let mut rng = SessionRng::new(3);
        let m = TabularModel::from_fn(3, 2, |_| Distribution::random_simplex(3, &mut rng));
        let back = TabularModel::from_spec(&m.to_spec()).unwrap();
        for ctx in enumerate_contexts(3, 2) {
            let a = m.next_distribution(&ctx);
            let b = back.next_distribution(&ctx);
            for (x, y) in a.probs().iter().zip(b.probs()) {
                assert!(close(*x, *y, 1e-15));
            }
        }
    }

    #[test]
    fn enumerated_contexts_are_distinct_keys() {
        let ctxs = enumerate_contexts(3, 2);
        assert_eq!(ctxs.len(), 1 + 3 + 9);
        let keys: BTreeMap<Vec<usize>, ()> = ctxs.iter().map(|c| (padded_key(c, 2, 3), ())).collect();
        assert_eq!(keys.len(), ctxs.len());
    }

    #[test]
    fn bigram_counts() {
        let m = train_ngram(&toks(&[0, 1, 0, 1, 0]), 2, 2, 1.0).unwrap();
        assert_eq!(m.count(&toks(&[0]), TokenId(1)), 2);
        assert_eq!(m.count(&toks(&[0]), TokenId(0)), 0);
        assert_eq!(m.next_distribution(&toks(&[0])).probs(), &[0.25, 0.75]);
    }

    #[test]
    fn unseen_context_is_uniform() {
        let m = train_ngram(&toks(&[0, 0, 0]), 2, 2, 1.0).unwrap();
        assert_eq!(m.next_distribution(&toks(&[1])).probs(), &[0.5, 0.5]);
        let empty = train_ngram(&[], 3, 3, 0.5).unwrap();
        assert_eq!(empty.next_distribution(&toks(&[0, 1])), Distribution::uniform(3));
    }

    #[test]
    fn heavy_smoothing_is_nearly_uniform() {
        let m = train_ngram(&toks(&[0, 1, 1, 1, 1, 0, 1]), 2, 2, 1e6).unwrap();
        for &p in m.next_distribution(&toks(&[1])).probs() {
            assert!(close(p, 0.5, 1e-5));
        }
    }

    #[test]
    fn ngram_errors() {
        assert!(matches!(train_ngram(&toks(&[0, 2]), 2, 2, 1.0), Err(ModelError::InvalidCorpusToken { position: 1, token: 2 })));
        assert!(matches!(train_ngram(&[], 2, 0, 1.0), Err(ModelError::InvalidOrder(0))));
        assert!(matches!(train_ngram(&[], 2, 1, 0.0), Err(ModelError::InvalidSmoothing(_))));
    }

    #[test]
    fn temper_identity() {
        let mut rng = SessionRng::new(8);
        let base = TabularModel::from_fn(4, 1, |_| Distribution::random_simplex(4, &mut rng));
        let t = temper(&base, 1.0, 0.0).unwrap();
        for ctx in enumerate_contexts(4, 1) {
            for (a, b) in t.next_distribution(&ctx).probs().iter().zip(base.next_distribution(&ctx).probs()) {
                assert!(close(*a, *b, 1e-12));
            }
        }
    }

    #[test]
    fn temper_limits_and_mix() {
        let base = TabularModel::from_spec(&order0(&[0.25, 0.75])).unwrap();
        let cold = temper(&base, 1e-3, 0.0).unwrap().next_distribution(&[]);
        assert!(cold.probs()[1] > 1.0 - 1e-12);
        let mixed = temper(&base, 1.0, 0.2).unwrap().next_distribution(&[]);
        assert!(close(mixed.probs()[0], 0.3, 1e-12) && close(mixed.probs()[1], 0.7, 1e-12));
    }

    #[test]
    fn temper_errors() {
        let base = TabularModel::from_spec(&order0(&[0.5, 0.5])).unwrap();
        assert!(matches!(temper(&base, 0.0, 0.0), Err(ModelError::InvalidTemperature(_))));
        assert!(matches!(temper(&base, -1.0, 0.0), Err(ModelError::InvalidTemperature(_))));
        assert!(matches!(temper(&base, 1.0, 1.0), Err(ModelError::InvalidMix(_))));
    }

    #[test]
    fn models_emit_valid_distributions_with_floor() {
        let mut rng = SessionRng::new(77);
        let base = TabularModel::from_fn(5, 2, |_| Distribution::random_simplex(5, &mut rng).sharpened(4.0));
        let corpus: Vec<TokenId> = (0..500).map(|_| TokenId(rng.below(5))).collect();
        let ngram = train_ngram(&corpus, 5, 3, 0.1).unwrap();
        let eps = 0.05;
        let draft = temper(&base, 2.5, eps).unwrap();
        for _ in 0..1000 {
            let len = rng.below(6);
            let ctx: Vec<TokenId> = (0..len).map(|_| TokenId(rng.below(5))).collect();
            for d in [base.next_distribution(&ctx), ngram.next_distribution(&ctx), draft.next_distribution(&ctx)] {
                assert_eq!(d.len(), 5);
                assert!(Distribution::new(d.probs().to_vec()).is_ok());
            }
            assert!(draft.next_distribution(&ctx).probs().iter().all(|&p| p >= eps / 5.0 - 1e-15));
        }
    }

    #[test]
    fn phrase_model_structure() {
        let params = PhraseParams { vocab_size: 64, continue_prob: 0.75, head_mass: 0.85, tail_scale: 1e-8 };
        let m = phrase_model(&params, &mut SessionRng::new(3)).unwrap();
        let mut inner = 0;
        for t in 0..64 {
            let d = m.next_distribution(&[TokenId(t)]);
            let top = d.prob(dist::argmax(&d));
            if top > 0.999 {
                inner += 1;
            } else {
                assert!((0.85..0.9).contains(&top), "boundary head {top}");
            }
        }
        assert!(inner > 32 && inner < 63, "inner rows {inner}");
        let again = phrase_model(&params, &mut SessionRng::new(3)).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn phrase_params_validation() {
        let ok = PhraseParams { vocab_size: 8, continue_prob: 0.5, head_mass: 0.9, tail_scale: 1e-8 };
        assert!(ok.validate().is_ok());
        assert!(PhraseParams { vocab_size: 1, ..ok }.validate().is_err());
        assert!(PhraseParams { continue_prob: 1.0, ..ok }.validate().is_err());
        assert!(PhraseParams { head_mass: 1.0, ..ok }.validate().is_err());
        assert!(PhraseParams { tail_scale: 0.0, ..ok }.validate().is_err());
    }
}
