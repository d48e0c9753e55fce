//! Finite categorical distributions and the information-theoretic
//! primitives built on them. All logarithms are natural (nats).

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SessionRng;

/// Entries must sum to one within this tolerance.
pub const NORMALIZATION_TOL: f64 = 1e-9;
/// Entries in `[-NONNEG_TOL, 0)` are treated as rounding noise and clamped.
pub const NONNEG_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("degenerate weights: all entries are zero")]
    DegenerateWeights,
    #[error("invalid weight {value} at index {index}")]
    InvalidWeight { index: usize, value: f64 },
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("empty distribution")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("degenerate residual: target and draft coincide")]
    DegenerateResidual,
}

/// Index of a vocabulary entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub usize);

impl TokenId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl From<usize> for TokenId {
    fn from(i: usize) -> Self {
        TokenId(i)
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A normalized probability vector over a finite vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    /// Validates an already-normalized probability vector.
    pub fn new(mut probs: Vec<f64>) -> Result<Self, DistError> {
        if probs.is_empty() {
            return Err(DistError::Empty);
        }
        let mut sum = 0.0;
        for (index, p) in probs.iter_mut().enumerate() {
            if !p.is_finite() || *p < -NONNEG_TOL {
                return Err(DistError::InvalidWeight { index, value: *p });
            }
            if *p < 0.0 {
                *p = 0.0;
            }
            sum += *p;
        }
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(DistError::NotNormalized(sum));
        }
        Ok(Distribution { probs })
    }

    pub fn uniform(vocab: usize) -> Self {
        assert!(vocab > 0, "uniform distribution over an empty vocabulary");
        Distribution { probs: alloc::vec![1.0 / vocab as f64; vocab] }
    }

    pub fn point_mass(vocab: usize, token: TokenId) -> Self {
        assert!(token.0 < vocab, "token outside vocabulary");
        let mut probs = alloc::vec![0.0; vocab];
        probs[token.0] = 1.0;
        Distribution { probs }
    }

    /// Draws from the flat Dirichlet over the simplex (normalized exponentials).
    pub fn random_simplex(vocab: usize, rng: &mut SessionRng) -> Self {
        assert!(vocab > 0);
        let weights: Vec<f64> = (0..vocab).map(|_| rng.exponential()).collect();
        normalize(&weights).expect("exponential draws are positive")
    }

    /// `normalize(probs^power)`; power > 1 sharpens, power < 1 flattens.
    pub fn sharpened(&self, power: f64) -> Self {
        let weights: Vec<f64> = self.probs.iter().map(|&p| if p > 0.0 { libm::pow(p, power) } else { 0.0 }).collect();
        match normalize(&weights) {
            Ok(d) => d,
            // Underflow for extreme powers: fall back to the argmax.
            Err(_) => Distribution::point_mass(self.len(), argmax(self)),
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.probs[token.0]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }
}

impl<'de> Deserialize<'de> for Distribution {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            probs: Vec<f64>,
        }
        let raw = Raw::deserialize(de)?;
        Distribution::new(raw.probs).map_err(serde::de::Error::custom)
    }
}

/// Divides non-negative weights by their sum.
pub fn normalize(weights: &[f64]) -> Result<Distribution, DistError> {
    if weights.is_empty() {
        return Err(DistError::Empty);
    }
    let mut sum = 0.0;
    for (index, &w) in weights.iter().enumerate() {
        if !w.is_finite() || w < 0.0 {
            return Err(DistError::InvalidWeight { index, value: w });
        }
        sum += w;
    }
    if sum <= 0.0 {
        return Err(DistError::DegenerateWeights);
    }
    if !sum.is_finite() {
        return Err(DistError::InvalidWeight { index: 0, value: sum });
    }
    Ok(Distribution { probs: weights.iter().map(|w| w / sum).collect() })
}

/// Shannon entropy `-Σ d ln d`, with `0 ln 0 = 0`.
pub fn entropy(d: &Distribution) -> f64 {
    let h: f64 = d.probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * libm::log(p)).sum();
    h.max(0.0)
}

/// Cross entropy `-Σ q ln p`. Infinite when `q` puts mass where `p` has none.
pub fn cross_entropy(q: &Distribution, p: &Distribution) -> f64 {
    check_len(q, p);
    let mut h = 0.0;
    for (&qx, &px) in q.probs.iter().zip(&p.probs) {
        if qx > 0.0 {
            if px <= 0.0 {
                return f64::INFINITY;
            }
            h -= qx * libm::log(px);
        }
    }
    h
}

/// `KL(q || p)` computed as cross entropy minus entropy, clamped at zero.
pub fn kl_divergence(q: &Distribution, p: &Distribution) -> f64 {
    kl_divergence_unclamped(q, p).max(0.0)
}

pub(crate) fn kl_divergence_unclamped(q: &Distribution, p: &Distribution) -> f64 {
    let hqp = cross_entropy(q, p);
    if hqp.is_infinite() {
        return f64::INFINITY;
    }
    hqp - entropy_unclamped(q)
}

fn entropy_unclamped(d: &Distribution) -> f64 {
    d.probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * libm::log(p)).sum()
}

/// Total variation distance, half the L1 distance.
pub fn tvd(p: &Distribution, q: &Distribution) -> f64 {
    check_len(p, q);
    0.5 * p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Inverse-CDF draw.
pub fn sample(d: &Distribution, rng: &mut SessionRng) -> TokenId {
    let u = rng.uniform();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in d.probs.iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last_positive = i;
            if u < cum {
                return TokenId(i);
            }
        }
    }
    // u landed in the rounding gap above the final cumulative sum.
    TokenId(last_positive)
}

/// `normalize(max(p - q, 0))`: the distribution a rejected draft token is
/// replaced from so that accepted-or-corrected tokens follow `p` exactly.
pub fn residual(p: &Distribution, q: &Distribution) -> Result<Distribution, DistError> {
    if p.len() != q.len() {
        return Err(DistError::LengthMismatch(p.len(), q.len()));
    }
    let diff: Vec<f64> = p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).max(0.0)).collect();
    if diff.iter().all(|&x| x <= NONNEG_TOL) {
        return Err(DistError::DegenerateResidual);
    }
    normalize(&diff)
}

/// Index of the largest probability; ties go to the smallest index.
pub fn argmax(d: &Distribution) -> TokenId {
    let mut best = 0;
    for (i, &p) in d.probs.iter().enumerate().skip(1) {
        if p > d.probs[best] {
            best = i;
        }
    }
    TokenId(best)
}

fn check_len(a: &Distribution, b: &Distribution) {
    assert_eq!(a.len(), b.len(), "distributions over different vocabularies");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::close;
    use alloc::vec;
    use proptest::prelude::*;

    fn d(v: &[f64]) -> Distribution {
        Distribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[2.0, 2.0]).unwrap().probs(), &[0.5, 0.5]);
        assert_eq!(normalize(&[1.0, 0.0, 0.0]).unwrap().probs(), &[1.0, 0.0, 0.0]);
        assert_eq!(normalize(&[1.0, 3.0]).unwrap().probs(), &[0.25, 0.75]);
    }

    #[test]
    fn normalize_errors() {
        assert_eq!(normalize(&[0.0, 0.0]), Err(DistError::DegenerateWeights));
        assert!(matches!(normalize(&[1.0, -0.5]), Err(DistError::InvalidWeight { index: 1, .. })));
        assert!(matches!(normalize(&[f64::NAN, 1.0]), Err(DistError::InvalidWeight { index: 0, .. })));
        assert!(matches!(normalize(&[f64::INFINITY]), Err(DistError::InvalidWeight { .. })));
    }

    #[test]
    fn new_rejects_unnormalized() {
        assert!(matches!(Distribution::new(vec![0.5, 0.6]), Err(DistError::NotNormalized(_))));
        assert!(Distribution::new(vec![1.0 - 1e-10, 1e-10 * 0.5]).is_ok());
        assert_eq!(Distribution::new(vec![1.0, -1e-13]).unwrap().probs(), &[1.0, 0.0]);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&d(&[1.0, 0.0, 0.0, 0.0])), 0.0);
        assert!(close(entropy(&Distribution::uniform(4)), 1.386294, 1e-6));
        assert!(close(entropy(&d(&[0.5, 0.25, 0.25])), 1.039721, 1e-6));
    }

    #[test]
    fn cross_entropy_examples() {
        let u = Distribution::uniform(4);
        assert!(close(cross_entropy(&u, &u), 1.386294, 1e-6));
        assert!(close(cross_entropy(&d(&[1.0, 0.0]), &d(&[0.5, 0.5])), core::f64::consts::LN_2, 1e-12));
        assert_eq!(cross_entropy(&d(&[0.5, 0.5]), &d(&[1.0, 0.0])), f64::INFINITY);
    }

    #[test]
    fn kl_examples() {
        let u = Distribution::uniform(3);
        assert_eq!(kl_divergence(&u, &u), 0.0);
        assert!(close(kl_divergence(&d(&[0.9, 0.1]), &d(&[0.5, 0.5])), 0.368064207, 1e-9));
        assert!(close(kl_divergence(&d(&[0.5, 0.5]), &d(&[0.9, 0.1])), 0.510826, 1e-6));
        assert_eq!(kl_divergence(&d(&[0.5, 0.5]), &d(&[1.0, 0.0])), f64::INFINITY);
    }

    #[test]
    fn tvd_examples() {
        let p = d(&[0.5, 0.5]);
        assert_eq!(tvd(&p, &p), 0.0);
        assert_eq!(tvd(&d(&[1.0, 0.0]), &d(&[0.0, 1.0])), 1.0);
        assert!(close(tvd(&p, &d(&[0.9, 0.1])), 0.4, 1e-15));
    }

    #[test]
    fn sample_point_mass_and_determinism() {
        let pm = Distribution::point_mass(4, TokenId(2));
        let mut rng = SessionRng::new(11);
        for _ in 0..1000 {
            assert_eq!(sample(&pm, &mut rng), TokenId(2));
        }
        let dd = d(&[0.3, 0.7]);
        let first = sample(&dd, &mut SessionRng::new(99));
        for _ in 0..10 {
            assert_eq!(sample(&dd, &mut SessionRng::new(99)), first);
        }
    }

    #[test]
    fn sample_frequency_fair_coin() {
        let dd = d(&[0.5, 0.5]);
        let mut rng = SessionRng::new(2024);
        let n = 100_000;
        let zeros = (0..n).filter(|_| sample(&dd, &mut rng) == TokenId(0)).count();
        let f = zeros as f64 / n as f64;
        assert!((0.494..=0.506).contains(&f), "{f}");
    }

    #[test]
    fn sample_frequencies_within_four_sigma() {
        let dd = d(&[0.05, 0.15, 0.3, 0.5]);
        for seed in [1u64, 2, 3] {
            let mut rng = SessionRng::new(seed);
            let n = 50_000usize;
            let mut counts = [0usize; 4];
            for _ in 0..n {
                counts[sample(&dd, &mut rng).0] += 1;
            }
            for (i, &c) in counts.iter().enumerate() {
                let p = dd.probs()[i];
                let band = 4.0 * libm::sqrt(p * (1.0 - p) / n as f64);
                assert!((c as f64 / n as f64 - p).abs() <= band, "seed {seed} token {i}");
            }
        }
    }

    #[test]
    fn residual_examples() {
        assert_eq!(residual(&d(&[0.5, 0.5]), &d(&[0.9, 0.1])).unwrap().probs(), &[0.0, 1.0]);
        assert_eq!(residual(&d(&[0.6, 0.3, 0.1]), &d(&[0.2, 0.5, 0.3])).unwrap().probs(), &[1.0, 0.0, 0.0]);
        let p = d(&[0.6, 0.4]);
        assert_eq!(residual(&p, &p), Err(DistError::DegenerateResidual));
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax(&d(&[0.1, 0.7, 0.2])), TokenId(1));
        assert_eq!(argmax(&d(&[0.5, 0.5])), TokenId(0));
        assert_eq!(argmax(&d(&[0.2, 0.2, 0.6])), TokenId(2));
    }

    fn pair() -> impl Strategy<Value = (Distribution, Distribution)> {
        (2usize..=32, any::<u64>()).prop_map(|(v, seed)| {
            let mut rng = SessionRng::new(seed);
            (Distribution::random_simplex(v, &mut rng), Distribution::random_simplex(v, &mut rng))
        })
    }

    proptest! {
        #[test]
        fn entropy_in_range((p, _q) in pair()) {
            let h = entropy(&p);
            prop_assert!(h >= 0.0);
            prop_assert!(h <= libm::log(p.len() as f64) + 1e-12);
        }

        #[test]
        fn kl_is_cross_minus_entropy((p, q) in pair()) {
            let raw = kl_divergence_unclamped(&q, &p);
            prop_assert_eq!(raw, cross_entropy(&q, &p) - entropy_unclamped(&q));
            prop_assert!(raw >= -1e-12);
        }

        #[test]
        fn overlap_equals_one_minus_tvd((p, q) in pair()) {
            let overlap: f64 = p.probs().iter().zip(q.probs()).map(|(a, b)| a.min(*b)).sum();
            prop_assert!((overlap - (1.0 - tvd(&p, &q))).abs() <= 1e-12);
        }

        #[test]
        fn residual_support((p, q) in pair()) {
            let r = residual(&p, &q).unwrap();
            prop_assert!((r.probs().iter().sum::<f64>() - 1.0).abs() <= NORMALIZATION_TOL);
            for i in 0..p.len() {
                if p.probs()[i] <= q.probs()[i] {
                    prop_assert_eq!(r.probs()[i], 0.0);
                }
            }
        }
    }
}
