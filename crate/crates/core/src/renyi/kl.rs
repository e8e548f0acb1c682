//! Reference KL divergences (the λ → 1 limits), computed from the standard
//! log-gamma/digamma forms rather than from the order-λ formulas.

use crate::error::{Error, Result};
use crate::posterior::DPPosterior;
use crate::special::{digamma_unchecked, log_gamma_unchecked};

/// KL(Dir(a) ‖ Dir(b)). Coordinates where both counts are zero are ignored;
/// a zero on exactly one side makes the divergence infinite.
pub fn dirichlet_kl(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::arg("Dirichlet parameter lengths differ"));
    }
    let mut live_a = Vec::with_capacity(a.len());
    let mut live_b = Vec::with_capacity(b.len());
    for (&x, &y) in a.iter().zip(b) {
        if x < 0.0 || y < 0.0 {
            return Err(Error::arg("negative Dirichlet parameter"));
        }
        match (x > 0.0, y > 0.0) {
            (false, false) => {}
            (true, true) => {
                live_a.push(x);
                live_b.push(y);
            }
            _ => return Ok(f64::INFINITY),
        }
    }
    if live_a.is_empty() {
        return Err(Error::arg("all Dirichlet parameters are zero"));
    }
    let a0: f64 = live_a.iter().sum();
    let b0: f64 = live_b.iter().sum();
    let psi_a0 = digamma_unchecked(a0);
    let mut kl = log_gamma_unchecked(a0) - log_gamma_unchecked(b0);
    for (&x, &y) in live_a.iter().zip(&live_b) {
        kl += log_gamma_unchecked(y) - log_gamma_unchecked(x) + (x - y) * (digamma_unchecked(x) - psi_a0);
    }
    Ok(kl)
}

/// KL(N(μ, diag σ²) ‖ N(μ′, diag σ′²)).
pub fn gaussian_kl_diag(mu: &[f64], sigma: &[f64], mu_prime: &[f64], sigma_prime: &[f64]) -> f64 {
    mu.iter()
        .zip(sigma)
        .zip(mu_prime.iter().zip(sigma_prime))
        .map(|((m, s), (mp, sp))| {
            let r = s / sp;
            let dm = (m - mp) / sp;
            -r.ln() + 0.5 * (r * r + dm * dm) - 0.5
        })
        .sum()
}

/// KL between the ordered weighted-vector sampling distributions of two
/// equally shaped posteriors, split into `(dirichlet, gaussian)` parts.
pub fn dp_posterior_kl(q: &DPPosterior, q_prime: &DPPosterior) -> Result<(f64, f64)> {
    if q.n() != q_prime.n() || q.d() != q_prime.d() || q.kappa() != q_prime.kappa() {
        return Err(Error::arg("posterior shapes differ"));
    }
    let (a, _) = q.slot_alphas();
    let (b, _) = q_prime.slot_alphas();
    let dirichlet = dirichlet_kl(&a, &b)?;
    let gaussian = (0..q.components())
        .map(|i| q.kappa()[i] as f64 * gaussian_kl_diag(q.mu(i), q.sigma(i), q_prime.mu(i), q_prime.sigma(i)))
        .sum();
    Ok((dirichlet, gaussian))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_of_identical_is_zero() {
        assert!(dirichlet_kl(&[0.3, 2.0, 1.0], &[0.3, 2.0, 1.0]).unwrap().abs() < 1e-14);
        assert!(gaussian_kl_diag(&[1.0, 2.0], &[0.5, 3.0], &[1.0, 2.0], &[0.5, 3.0]).abs() < 1e-15);
    }

    #[test]
    fn beta_kl_reference() {
        // KL(Beta(2,3) || Beta(1,1)) = ln B(1,1) - ln B(2,3) + (2-1)ψ(2) + (3-1)ψ(3) - (5-2)ψ(5)
        let want = 12f64.ln() + (1.0 - 0.577_215_664_901_532_9) + 2.0 * (1.5 - 0.577_215_664_901_532_9)
            - 3.0 * (25.0 / 12.0 - 0.577_215_664_901_532_9);
        assert!((dirichlet_kl(&[2.0, 3.0], &[1.0, 1.0]).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn one_sided_zero_is_infinite() {
        assert_eq!(dirichlet_kl(&[1.0, 0.0], &[1.0, 1.0]).unwrap(), f64::INFINITY);
        assert!(dirichlet_kl(&[1.0, 0.0], &[1.0, 0.0]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn gaussian_reference() {
        // KL(N(0,1) || N(1, 4)) = ln 2 + (1 + 1)/8 - 1/2
        let want = 2f64.ln() + 0.25 - 0.5;
        assert!((gaussian_kl_diag(&[0.0], &[1.0], &[1.0], &[2.0]) - want).abs() < 1e-15);
    }
}
