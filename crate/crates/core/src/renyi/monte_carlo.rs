//! Monte-Carlo estimation of Rényi divergences, used as an independent
//! check on every closed form.
//!
//! The estimator draws `z ~ Q` and averages `exp((λ−1)(ln Q(z) − ln Q′(z)))`
//! in the log domain. The confidence half-width comes from the delta method
//! on the log of the sample mean.

use rayon::prelude::*;

use super::RenyiOrder;
use crate::error::{Error, Result};
use crate::posterior::{DPPosterior, WeightedVectorSample};
use crate::sampling::{sample_log_dirichlet, RngState};
use crate::special::log_gamma_unchecked;

const Z_99: f64 = 2.575_829_303_548_900_4;
const CHUNK: usize = 1 << 15;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    /// Half-width of the 99% confidence interval.
    pub ci99: f64,
    pub draws: usize,
    /// Set when some draw had positive density under Q but zero under Q′.
    pub infinite: bool,
}

impl McEstimate {
    pub fn contains(&self, value: f64) -> bool {
        if self.infinite || value.is_infinite() {
            return self.infinite && value == f64::INFINITY;
        }
        (value - self.estimate).abs() <= self.ci99
    }
}

fn mix(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Estimates D_λ(Q‖Q′) from draws of Q.
///
/// Draws are split into fixed-size chunks, each with its own stream derived
/// from `rng`, so the result does not depend on thread scheduling.
pub fn rd_monte_carlo<T, S, LQ, LP>(
    log_q: LQ,
    log_q_prime: LP,
    sampler: S,
    order: RenyiOrder,
    n_draws: usize,
    rng: &RngState,
) -> Result<McEstimate>
where
    S: Fn(&mut RngState) -> Result<T> + Sync,
    LQ: Fn(&T) -> f64 + Sync,
    LP: Fn(&T) -> f64 + Sync,
{
    if n_draws < 10_000 {
        return Err(Error::arg(format!("need at least 1e4 draws, got {n_draws}")));
    }
    let lm1 = order.value() - 1.0;
    let base_seed = mix(rng.seed(), rng.stream());
    let chunks = n_draws.div_ceil(CHUNK);

    let per_chunk: Vec<Result<(Vec<f64>, bool)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut local = RngState::new(base_seed, c as u64);
            let count = CHUNK.min(n_draws - c * CHUNK);
            let mut out = Vec::with_capacity(count);
            let mut infinite = false;
            for _ in 0..count {
                let z = sampler(&mut local)?;
                let lq = log_q(&z);
                let lp = log_q_prime(&z);
                if lq == f64::NEG_INFINITY {
                    // outside the support of Q; contributes nothing
                    out.push(f64::NEG_INFINITY);
                    continue;
                }
                if lp == f64::NEG_INFINITY {
                    infinite = true;
                    continue;
                }
                out.push(lm1 * (lq - lp));
            }
            Ok((out, infinite))
        })
        .collect();

    let mut ys = Vec::with_capacity(n_draws);
    let mut infinite = false;
    for r in per_chunk {
        let (v, inf) = r?;
        infinite |= inf;
        ys.extend(v);
    }
    if infinite {
        return Ok(McEstimate {
            estimate: f64::INFINITY,
            ci99: 0.0,
            draws: n_draws,
            infinite: true,
        });
    }
    if ys.iter().any(|y| y.is_nan()) {
        return Err(Error::Numerical("NaN log-density ratio".into()));
    }
    let shift = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = ys.len() as f64;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for y in &ys {
        let w = (y - shift).exp();
        sum += w;
        sum_sq += w * w;
    }
    let mean = sum / n;
    let var = ((sum_sq / n - mean * mean) * n / (n - 1.0)).max(0.0);
    let se_log = var.sqrt() / (mean * n.sqrt());
    Ok(McEstimate {
        estimate: (shift + mean.ln()) / lm1,
        ci99: Z_99 * se_log / lm1,
        draws: n_draws,
        infinite: false,
    })
}

/// Log-density of a diagonal Gaussian.
pub fn gaussian_log_density(x: &[f64], mu: &[f64], sigma: &[f64]) -> f64 {
    x.iter()
        .zip(mu)
        .zip(sigma)
        .map(|((x, m), s)| {
            let z = (x - m) / s;
            -0.5 * z * z - s.ln() - HALF_LN_2PI
        })
        .sum()
}

/// One draw of the ordered sampling procedure with log-weights, so that
/// tiny weights do not underflow inside the oracle.
#[derive(Clone, Debug)]
pub struct DpDraw {
    pub log_pi: Vec<f64>,
    pub z: Vec<f64>,
}

/// Draws `(ln π, Z)` from `q`.
pub fn sample_dp_log(q: &DPPosterior, rng: &mut RngState) -> Result<DpDraw> {
    let (alphas, owner) = q.slot_alphas();
    let log_pi = sample_log_dirichlet(rng, &alphas)?;
    let d = q.d();
    let mut z = Vec::with_capacity(owner.len() * d);
    for &i in &owner {
        for (m, s) in q.mu(i).iter().zip(q.sigma(i)) {
            z.push(m + s * rng.standard_normal());
        }
    }
    Ok(DpDraw { log_pi, z })
}

/// `ln Dir(π; α/κ expanded) + Σ ln N(Zⱼ; μ, σ²)` with weights given as logs.
///
/// Slots with zero pseudo-count must carry zero weight and are dropped from
/// the Dirichlet; a zero weight on a live slot gives `−∞`. With a single
/// live slot the weight vector is degenerate and contributes nothing.
pub fn dp_log_density_from_log_weights(q: &DPPosterior, log_pi: &[f64], z: &[f64]) -> Result<f64> {
    let (alphas, owner) = q.slot_alphas();
    let d = q.d();
    if log_pi.len() != alphas.len() || z.len() != alphas.len() * d {
        return Err(Error::arg(format!(
            "sample has {} weights / {} values, posterior expects {} slots of dimension {d}",
            log_pi.len(),
            z.len(),
            alphas.len()
        )));
    }
    let live = alphas.iter().filter(|a| **a > 0.0).count();
    let mut dirichlet = 0.0;
    if live > 1 {
        let total: f64 = alphas.iter().sum();
        dirichlet = log_gamma_unchecked(total);
        for (&a, &lp) in alphas.iter().zip(log_pi) {
            if a > 0.0 {
                if lp == f64::NEG_INFINITY {
                    return Ok(f64::NEG_INFINITY);
                }
                dirichlet += (a - 1.0) * lp - log_gamma_unchecked(a);
            } else if lp > f64::NEG_INFINITY {
                return Ok(f64::NEG_INFINITY);
            }
        }
    } else {
        for (&a, &lp) in alphas.iter().zip(log_pi) {
            let ok = if a > 0.0 { lp == 0.0 } else { lp == f64::NEG_INFINITY };
            if !ok {
                return Ok(f64::NEG_INFINITY);
            }
        }
    }
    let gaussian: f64 = owner
        .iter()
        .enumerate()
        .map(|(j, &i)| gaussian_log_density(&z[j * d..(j + 1) * d], q.mu(i), q.sigma(i)))
        .sum();
    Ok(dirichlet + gaussian)
}

/// Log-density of a released sample under the factorized sampling
/// distribution of `q`.
pub fn rd_dp_log_density(q: &DPPosterior, s: &WeightedVectorSample) -> Result<f64> {
    if s.d != q.d() {
        return Err(Error::arg("sample and posterior dimensions differ"));
    }
    let log_pi: Vec<f64> = s.pi.iter().map(|p| p.ln()).collect();
    dp_log_density_from_log_weights(q, &log_pi, &s.z)
}

/// Monte-Carlo estimate of D_λ(Q‖Q′) for two equally shaped posteriors.
pub fn rd_dp_monte_carlo(
    q: &DPPosterior,
    q_prime: &DPPosterior,
    order: RenyiOrder,
    n_draws: usize,
    rng: &RngState,
) -> Result<McEstimate> {
    if q.n() != q_prime.n() || q.d() != q_prime.d() || q.kappa() != q_prime.kappa() {
        return Err(Error::arg("posterior shapes differ"));
    }
    let density = |p: &DPPosterior, x: &DpDraw| {
        dp_log_density_from_log_weights(p, &x.log_pi, &x.z).unwrap_or(f64::NAN)
    };
    rd_monte_carlo(
        |x: &DpDraw| density(q, x),
        |x: &DpDraw| density(q_prime, x),
        |r: &mut RngState| sample_dp_log(q, r),
        order,
        n_draws,
        rng,
    )
}

/// Monte-Carlo estimate of D_λ between two diagonal Gaussians.
pub fn rd_gaussian_monte_carlo(
    mu: &[f64],
    sigma: &[f64],
    mu_prime: &[f64],
    sigma_prime: &[f64],
    order: RenyiOrder,
    n_draws: usize,
    rng: &RngState,
) -> Result<McEstimate> {
    if [sigma.len(), mu_prime.len(), sigma_prime.len()].iter().any(|&l| l != mu.len()) {
        return Err(Error::arg("vector lengths differ"));
    }
    rd_monte_carlo(
        |x: &Vec<f64>| gaussian_log_density(x, mu, sigma),
        |x: &Vec<f64>| gaussian_log_density(x, mu_prime, sigma_prime),
        |r: &mut RngState| Ok(mu.iter().zip(sigma).map(|(m, s)| m + s * r.standard_normal()).collect()),
        order,
        n_draws,
        rng,
    )
}
