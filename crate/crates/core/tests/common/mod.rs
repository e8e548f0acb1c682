#![allow(dead_code)]

use nvdp::posterior::DPPosterior;
use nvdp::renyi::{rd_dp_posteriors, RenyiOrder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// α ∈ [0.2, 3], μ ∈ [−1, 1], σ ∈ [0.5, 2] for every component including
/// the last one.
pub fn random_posterior(r: &mut impl Rng, n: usize, d: usize) -> DPPosterior {
    let k = n + 1;
    let alpha = (0..k).map(|_| r.random_range(0.2..3.0)).collect();
    let mu = (0..k * d).map(|_| r.random_range(-1.0..1.0)).collect();
    let sigma = (0..k * d).map(|_| r.random_range(0.5..2.0)).collect();
    DPPosterior::from_parts(d, alpha, mu, sigma, vec![1; k]).unwrap()
}

/// A pair whose importance weights `(Q/Q′)^{λ−1}` have a finite fourth
/// moment under Q, so the delta-method interval is meaningful: the closed
/// form at order `4λ − 3` must be finite.
pub fn random_oracle_pair(r: &mut impl Rng, n: usize, d: usize, lambda: f64) -> (DPPosterior, DPPosterior) {
    let check = RenyiOrder::new(4.0 * lambda - 3.0).unwrap();
    loop {
        let q = random_posterior(r, n, d);
        let qp = random_posterior(r, n, d);
        if rd_dp_posteriors(&q, &qp, check).unwrap().valid {
            return (q, qp);
        }
    }
}

/// Diagonal-Gaussian pair under the same fourth-moment condition.
pub fn random_gaussian_pair(r: &mut impl Rng, d: usize, lambda: f64) -> [Vec<f64>; 4] {
    let c = 4.0 * lambda - 3.0;
    loop {
        let mu: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let mp: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let s: Vec<f64> = (0..d).map(|_| r.random_range(0.5..2.0)).collect();
        let sp: Vec<f64> = (0..d).map(|_| r.random_range(0.5..2.0)).collect();
        if s.iter().zip(&sp).all(|(s, sp)| c * sp * sp + (1.0 - c) * s * s > 0.0) {
            return [mu, s, mp, sp];
        }
    }
}

pub fn random_examples(r: &mut impl Rng, count: usize, n_max: usize, d: usize, classes: usize) -> Vec<nvdp::network::Example> {
    (0..count)
        .map(|_| {
            let n = r.random_range(1..=n_max);
            nvdp::network::Example {
                n,
                x: (0..n * d).map(|_| r.random_range(-1.5..1.5)).collect(),
                target: nvdp::network::Target::Class(r.random_range(0..classes)),
            }
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
