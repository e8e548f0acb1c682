use super::{gaussian_block, RdBlocks, RenyiOrder, RenyiResult, SigmaOrientation};
use crate::error::{Error, Result};

fn check_lengths(lens: &[usize]) -> Result<()> {
    if lens.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::arg(format!("vector lengths differ: {lens:?}")));
    }
    Ok(())
}

fn check_positive(name: &str, v: &[f64]) -> Result<()> {
    match v.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
        Some(s) => Err(Error::arg(format!("{name} entry {s} is not positive"))),
        None => Ok(()),
    }
}

/// D_λ(N(μ, diag σ²) ‖ N(μ′, diag σ′²)) for per-token diagonal Gaussians.
///
/// The result reports the whole value in the Gaussian block; it is `+∞`
/// (`valid = false`) when the variance mixture is not positive in some
/// dimension.
pub fn rd_gaussian_diag(
    mu: &[f64],
    sigma: &[f64],
    mu_prime: &[f64],
    sigma_prime: &[f64],
    order: RenyiOrder,
) -> Result<RenyiResult> {
    rd_gaussian_diag_oriented(mu, sigma, mu_prime, sigma_prime, order, SigmaOrientation::Exact)
}

pub fn rd_gaussian_diag_oriented(
    mu: &[f64],
    sigma: &[f64],
    mu_prime: &[f64],
    sigma_prime: &[f64],
    order: RenyiOrder,
    orientation: SigmaOrientation,
) -> Result<RenyiResult> {
    check_lengths(&[mu.len(), sigma.len(), mu_prime.len(), sigma_prime.len()])?;
    check_positive("sigma", sigma)?;
    check_positive("sigma_prime", sigma_prime)?;
    let value = gaussian_block(mu, sigma, mu_prime, sigma_prime, sigma_prime, order.value(), orientation);
    Ok(RenyiResult::from_blocks(RdBlocks {
        dirichlet_total: 0.0,
        dirichlet_components: 0.0,
        gaussian_components: value,
    }))
}

/// `λ‖μ − μ′‖² / (2σ²)`: fixed isotropic Gaussian noise on pooled vectors.
pub fn rd_gaussian_isotropic(mu: &[f64], mu_prime: &[f64], sigma: f64, order: RenyiOrder) -> Result<f64> {
    check_lengths(&[mu.len(), mu_prime.len()])?;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::arg(format!("sigma {sigma} is not positive")));
    }
    let sq: f64 = mu.iter().zip(mu_prime).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(order.value() * sq / (2.0 * sigma * sigma))
}

/// `(λ/2)‖(μ − μ′)/σ‖²`: a learned, input-independent diagonal noise scale.
pub fn rd_gaussian_learned(mu: &[f64], mu_prime: &[f64], sigma: &[f64], order: RenyiOrder) -> Result<f64> {
    check_lengths(&[mu.len(), mu_prime.len(), sigma.len()])?;
    check_positive("sigma", sigma)?;
    let sq: f64 = mu
        .iter()
        .zip(mu_prime)
        .zip(sigma)
        .map(|((a, b), s)| ((a - b) / s).powi(2))
        .sum();
    Ok(0.5 * order.value() * sq)
}
