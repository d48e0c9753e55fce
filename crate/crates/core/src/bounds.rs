//! Acceptance rate of a draft/target pair and its lower bounds.
//!
//! `β = Σ min(p, q) = 1 - TVD(p, q)` is bounded below by the Pinsker form
//! `1 - sqrt(KL(q‖p) / 2)` and by Bretagnolle-Huber `1 - sqrt(1 - e^-KL)`.
//! Writing `KL = (γ - 1) H_q` with `γ = H_{q,p} / H_q` and replacing
//! `(γ - 1) / 2` by a constant `c` gives the draft-only approximation
//! `1 - sqrt(c H_q)`, which stays below the Pinsker bound exactly when
//! `γ <= 2c + 1`. Bounds are returned raw; negative values mean vacuous.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{cross_entropy, entropy, kl_divergence, tvd, Distribution};
use crate::special::{self, SpecialError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundsError {
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("degenerate fit: {0}")]
    DegenerateFit(&'static str),
    #[error(transparent)]
    Special(#[from] SpecialError),
}

pub fn acceptance_rate(p: &Distribution, q: &Distribution) -> f64 {
    assert_eq!(p.len(), q.len(), "distributions over different vocabularies");
    p.probs().iter().zip(q.probs()).map(|(a, b)| a.min(*b)).sum()
}

/// `1 - sqrt(KL(q‖p) / 2)`; `-inf` when the KL is infinite.
pub fn pinsker_bound(p: &Distribution, q: &Distribution) -> f64 {
    pinsker_from_kl(kl_divergence(q, p))
}

pub fn pinsker_from_kl(kl: f64) -> f64 {
    if kl.is_infinite() {
        return f64::NEG_INFINITY;
    }
    1.0 - libm::sqrt(0.5 * kl)
}

/// `1 - sqrt(1 - exp(-KL(q‖p)))`; zero when the KL is infinite.
pub fn bh_bound(p: &Distribution, q: &Distribution) -> f64 {
    bh_from_kl(kl_divergence(q, p))
}

pub fn bh_from_kl(kl: f64) -> f64 {
    // -expm1(-kl) = 1 - e^-kl without cancellation for small kl
    1.0 - libm::sqrt(-libm::expm1(-kl))
}

/// `1 - sqrt(c * h_q)`.
pub fn approx_bound(h_q: f64, c: f64) -> f64 {
    1.0 - libm::sqrt(c * h_q)
}

/// `H_{q,p} / H_q`, `None` when the draft entropy is zero.
pub fn gamma_ratio(h_qp: f64, h_q: f64) -> Option<f64> {
    if h_q > 0.0 {
        Some(h_qp / h_q)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validity {
    Holds,
    Violated,
    /// `H_q = 0`; the approximation bound equals 1 and is not checked.
    UndefinedRatio,
}

impl Validity {
    pub fn is_valid(self) -> bool {
        self != Validity::Violated
    }
}

/// Whether `γ <= 2c + 1`, the condition under which the approximation
/// bound sits below the Pinsker bound.
pub fn validity_condition(ratio: Option<f64>, c: f64) -> Validity {
    match ratio {
        None => Validity::UndefinedRatio,
        Some(g) if g <= 2.0 * c + 1.0 => Validity::Holds,
        Some(_) => Validity::Violated,
    }
}

/// `P(X <= 2c)` for `X ~ Gamma(shape, rate)`, i.e. the probability that a
/// shifted-gamma `γ = 1 + X` satisfies the validity condition.
pub fn gamma_validity_prob(shape: f64, rate: f64, c: f64) -> Result<f64, BoundsError> {
    for (name, value) in [("alpha", shape), ("beta", rate), ("c", c)] {
        if !(value > 0.0) {
            return Err(BoundsError::InvalidParameter { name, value });
        }
    }
    Ok(special::regularized_lower_gamma(shape, rate * 2.0 * c)?)
}

/// `Φ((2c + 1 - μ) / σ)` for Gaussian `γ`.
pub fn gaussian_validity_prob(mu: f64, sigma: f64, c: f64) -> Result<f64, BoundsError> {
    if !(sigma > 0.0) {
        return Err(BoundsError::InvalidParameter { name: "sigma", value: sigma });
    }
    Ok(special::normal_cdf((2.0 * c + 1.0 - mu) / sigma))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaFit {
    pub alpha: f64,
    pub beta_rate: f64,
    /// Samples used in the fit.
    pub used: usize,
    /// Samples below 1 that were clamped to 1.
    pub clamped: usize,
    /// Non-finite samples left out.
    pub excluded: usize,
}

/// Method-of-moments fit of `γ - 1 ~ Gamma(α, β)` using population moments.
pub fn fit_gamma_ratio(samples: &[f64]) -> Result<GammaFit, BoundsError> {
    let mut clamped = 0;
    let mut excluded = 0;
    let xs: Vec<f64> = samples
        .iter()
        .filter_map(|&g| {
            if !g.is_finite() {
                excluded += 1;
                None
            } else if g < 1.0 {
                clamped += 1;
                Some(0.0)
            } else {
                Some(g - 1.0)
            }
        })
        .collect();
    if xs.len() < 2 {
        return Err(BoundsError::DegenerateFit("fewer than two finite samples"));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if !(var > 0.0) || !(mean > 0.0) {
        return Err(BoundsError::DegenerateFit("zero variance or zero mean"));
    }
    Ok(GammaFit { alpha: mean * mean / var, beta_rate: mean / var, used: xs.len(), clamped, excluded })
}

/// Everything the bound analysis knows about one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub beta: f64,
    pub tvd: f64,
    pub kl_q_p: f64,
    pub pinsker: f64,
    pub bh: f64,
    pub approx: f64,
    pub h_q: f64,
    pub h_qp: f64,
    pub gamma_ratio: Option<f64>,
    pub c: f64,
    pub validity: Validity,
}

pub fn bound_report(p: &Distribution, q: &Distribution, c: f64) -> BoundReport {
    let h_q = entropy(q);
    let h_qp = cross_entropy(q, p);
    let kl = kl_divergence(q, p);
    let ratio = gamma_ratio(h_qp, h_q);
    BoundReport {
        beta: acceptance_rate(p, q),
        tvd: tvd(p, q),
        kl_q_p: kl,
        pinsker: pinsker_from_kl(kl),
        bh: bh_from_kl(kl),
        approx: approx_bound(h_q, c),
        h_q,
        h_qp,
        gamma_ratio: ratio,
        c,
        validity: validity_condition(ratio, c),
    }
}
