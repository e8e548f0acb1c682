//! Scalar special functions used by the divergence formulas, the KL
//! regularizers and the reparameterized Gamma sampler.
//!
//! | Function | Value |
//! |----------|-------|
//! | [`log_gamma`] | ln Γ(x) |
//! | [`digamma`] | ψ(x) = d/dx ln Γ(x) |
//! | [`trigamma`] | ψ′(x) |
//! | [`log_sum_exp`] | ln Σ exp(vᵢ) |
//! | [`gamma_p`], [`gamma_q`] | regularized incomplete gamma functions |
//! | [`gamma_p_inv`] | quantile of Gamma(a, 1) |
//! | [`gamma_quantile_shape_derivative`] | ∂x/∂a along a fixed quantile |

mod incomplete_gamma;

pub use incomplete_gamma::{
    gamma_p, gamma_p_inv, gamma_q, gamma_quantile_shape_derivative, log_gamma_p_q,
};

use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

// Arguments below this are shifted upwards by recurrence before the
// asymptotic expansions are applied.
const ASYMPTOTIC_START: f64 = 10.0;

/// Natural logarithm of the gamma function for `x > 0`.
///
/// Stirling's series for `x >= 10`; smaller arguments are lifted with
/// Γ(x) = Γ(x + k) / (x (x+1) … (x+k−1)).
pub fn log_gamma(x: f64) -> Result<f64> {
    if x.is_nan() || x <= 0.0 {
        return Err(Error::domain("log_gamma", format!("argument {x} is not positive")));
    }
    Ok(log_gamma_unchecked(x))
}

pub(crate) fn log_gamma_unchecked(x: f64) -> f64 {
    if x.is_infinite() {
        return f64::INFINITY;
    }
    let mut z = x;
    let mut prod = 1.0;
    while z < ASYMPTOTIC_START {
        prod *= z;
        z += 1.0;
    }
    stirling(z) - prod.ln()
}

fn stirling(z: f64) -> f64 {
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    // Bernoulli terms B_{2k} / (2k (2k-1) z^{2k-1}), k = 1..8
    let series = inv
        * (1.0 / 12.0
            + inv2
                * (-1.0 / 360.0
                    + inv2
                        * (1.0 / 1260.0
                            + inv2
                                * (-1.0 / 1680.0
                                    + inv2
                                        * (1.0 / 1188.0
                                            + inv2
                                                * (-691.0 / 360_360.0
                                                    + inv2
                                                        * (1.0 / 156.0
                                                            + inv2 * (-3617.0 / 122_400.0))))))));
    (z - 0.5) * z.ln() - z + HALF_LN_2PI + series
}

/// Digamma function ψ(x) for `x > 0`.
pub fn digamma(x: f64) -> Result<f64> {
    if x.is_nan() || x <= 0.0 {
        return Err(Error::domain("digamma", format!("argument {x} is not positive")));
    }
    Ok(digamma_unchecked(x))
}

pub(crate) fn digamma_unchecked(x: f64) -> f64 {
    if x.is_infinite() {
        return f64::INFINITY;
    }
    let mut z = x;
    let mut shift = 0.0;
    while z < ASYMPTOTIC_START {
        shift += 1.0 / z;
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let series = inv2
        * (1.0 / 12.0
            + inv2
                * (-1.0 / 120.0
                    + inv2
                        * (1.0 / 252.0
                            + inv2
                                * (-1.0 / 240.0
                                    + inv2
                                        * (1.0 / 132.0
                                            + inv2 * (-691.0 / 32_760.0 + inv2 * (1.0 / 12.0)))))));
    z.ln() - 0.5 * inv - series - shift
}

/// Trigamma function ψ′(x) for `x > 0`.
pub fn trigamma(x: f64) -> Result<f64> {
    if x.is_nan() || x <= 0.0 {
        return Err(Error::domain("trigamma", format!("argument {x} is not positive")));
    }
    Ok(trigamma_unchecked(x))
}

pub(crate) fn trigamma_unchecked(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    let mut z = x;
    let mut shift = 0.0;
    while z < ASYMPTOTIC_START {
        shift += 1.0 / (z * z);
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let series = inv
        + 0.5 * inv2
        + inv
            * inv2
            * (1.0 / 6.0
                + inv2
                    * (-1.0 / 30.0
                        + inv2
                            * (1.0 / 42.0
                                + inv2
                                    * (-1.0 / 30.0
                                        + inv2 * (5.0 / 66.0 + inv2 * (-691.0 / 2730.0 + inv2 * (7.0 / 6.0)))))));
    series + shift
}

/// `ln Σ exp(vᵢ)` evaluated with a max shift.
///
/// `−∞` entries are absorbed; a `+∞` entry makes the result `+∞`.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::arg("log_sum_exp of an empty list"));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_nan() {
        return Err(Error::arg("log_sum_exp of NaN"));
    }
    if max.is_infinite() {
        return Ok(max);
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// ln(1 + eˣ), accurate for large |x|.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function, the derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
