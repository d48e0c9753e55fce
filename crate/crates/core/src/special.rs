//! Special functions for the validity-probability analysis.

use thiserror::Error;

const MAX_ITER: usize = 1000;
const EPS: f64 = f64::EPSILON;
const FPMIN: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SpecialError {
    #[error("argument outside domain: {0}")]
    Domain(&'static str),
    #[error("special function convergence failure after {0} iterations")]
    Convergence(usize),
}

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1-x) = π / sin(πx)
        let pi = core::f64::consts::PI;
        return libm::log(pi / libm::sin(pi * x).abs()) - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * libm::log(2.0 * core::f64::consts::PI) + (x + 0.5) * libm::log(t) - t + libm::log(acc)
}

pub fn gamma(x: f64) -> f64 {
    libm::exp(ln_gamma(x))
}

/// `(P(a, x), Q(a, x))`, the regularized lower and upper incomplete gamma.
/// Series for `x < a + 1`, Lentz continued fraction for `Q` otherwise.
pub fn incomplete_gamma_pair(a: f64, x: f64) -> Result<(f64, f64), SpecialError> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(SpecialError::Domain("shape must be positive"));
    }
    if !(x >= 0.0) {
        return Err(SpecialError::Domain("argument must be non-negative"));
    }
    if x == 0.0 {
        return Ok((0.0, 1.0));
    }
    if x.is_infinite() {
        return Ok((1.0, 0.0));
    }
    let log_prefactor = -x + a * libm::log(x) - ln_gamma(a);
    if x < a + 1.0 {
        let mut ap = a;
        let mut del = 1.0 / a;
        let mut sum = del;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * EPS {
                let p = (sum * libm::exp(log_prefactor)).min(1.0);
                return Ok((p, 1.0 - p));
            }
        }
        Err(SpecialError::Convergence(MAX_ITER))
    } else {
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / FPMIN;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..=MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < FPMIN {
                d = FPMIN;
            }
            c = b + an / c;
            if c.abs() < FPMIN {
                c = FPMIN;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < EPS {
                let q = (libm::exp(log_prefactor) * h).min(1.0);
                return Ok((1.0 - q, q));
            }
        }
        Err(SpecialError::Convergence(MAX_ITER))
    }
}

/// Regularized lower incomplete gamma `P(a, x) = γ(a, x) / Γ(a)`.
pub fn regularized_lower_gamma(a: f64, x: f64) -> Result<f64, SpecialError> {
    incomplete_gamma_pair(a, x).map(|(p, _)| p)
}

/// Lower incomplete gamma `γ(a, x) = ∫₀ˣ t^(a-1) e^(-t) dt`.
pub fn lower_incomplete_gamma(a: f64, x: f64) -> Result<f64, SpecialError> {
    let p = regularized_lower_gamma(a, x)?;
    Ok(p * gamma(a))
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / core::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_known_values() {
        assert!((gamma(1.0) - 1.0).abs() < 1e-14);
        assert!((gamma(5.0) - 24.0).abs() < 1e-11);
        assert!((gamma(0.5) - libm::sqrt(core::f64::consts::PI)).abs() < 1e-14);
        assert!((ln_gamma(20.0) - 39.339_884_187_199_495).abs() < 1e-12);
    }

    #[test]
    fn closed_forms() {
        assert!((lower_incomplete_gamma(1.0, 1.0).unwrap() - (1.0 - libm::exp(-1.0))).abs() < 1e-15);
        assert_eq!(lower_incomplete_gamma(2.5, 0.0).unwrap(), 0.0);
        let p = regularized_lower_gamma(2.0, 3.0).unwrap();
        assert!((p - 0.800_852).abs() < 1e-6);
        assert!((p - (1.0 - libm::exp(-3.0) * 4.0)).abs() < 1e-14);
    }

    #[test]
    fn domain_errors() {
        assert!(regularized_lower_gamma(0.0, 1.0).is_err());
        assert!(regularized_lower_gamma(1.0, -1.0).is_err());
        assert!(regularized_lower_gamma(1.0, f64::NAN).is_err());
        assert_eq!(regularized_lower_gamma(3.0, f64::INFINITY).unwrap(), 1.0);
    }

    #[test]
    fn normal_cdf_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(2.0) - 0.977_249_868).abs() < 1e-9);
        assert!((normal_cdf(-1.0) - 0.158_655_254).abs() < 1e-9);
    }
}
