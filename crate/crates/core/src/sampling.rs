//! Seeded Gaussian, Gamma and Dirichlet sampling.
//!
//! Every random draw in the crate comes from an [`RngState`], a ChaCha
//! stream addressed by `(seed, stream)`. Distinct streams of one seed are
//! independent, which lets per-example and per-chunk work be seeded
//! without depending on scheduling order.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

/// A reproducible random stream.
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    stream: u64,
    inner: ChaCha12Rng,
}

impl RngState {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        RngState { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh stream of the same seed.
    pub fn fork(&self, stream: u64) -> Self {
        RngState::new(self.seed, stream)
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn open_unit(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// `mu + sigma ⊙ eps` for a supplied standard-normal vector.
pub fn gaussian_from_noise(mu: &[f64], sigma: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != sigma.len() || mu.len() != eps.len() {
        return Err(Error::arg(format!(
            "length mismatch: mu {}, sigma {}, eps {}",
            mu.len(),
            sigma.len(),
            eps.len()
        )));
    }
    check_sigma(sigma)?;
    Ok(mu
        .iter()
        .zip(sigma)
        .zip(eps)
        .map(|((m, s), e)| m + s * e)
        .collect())
}

fn check_sigma(sigma: &[f64]) -> Result<()> {
    match sigma.iter().find(|s| !(**s > 0.0)) {
        Some(s) => Err(Error::arg(format!("sigma entry {s} is not positive"))),
        None => Ok(()),
    }
}

/// Draws `N(mu, diag(sigma²))`.
pub fn sample_gaussian(rng: &mut RngState, mu: &[f64], sigma: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != sigma.len() {
        return Err(Error::arg("mu and sigma lengths differ"));
    }
    check_sigma(sigma)?;
    Ok(mu
        .iter()
        .zip(sigma)
        .map(|(m, s)| m + s * rng.standard_normal())
        .collect())
}

/// Draws `Gamma(shape, 1)`. A zero shape is the caller's degenerate case and
/// is rejected here.
pub fn sample_gamma(rng: &mut RngState, shape: f64) -> Result<f64> {
    if !(shape > 0.0) || !shape.is_finite() {
        return Err(Error::arg(format!("gamma shape {shape} is not positive")));
    }
    let dist = Gamma::new(shape, 1.0).map_err(|e| Error::arg(e.to_string()))?;
    Ok(dist.sample(rng))
}

/// Draws `ln G` with `G ~ Gamma(shape, 1)` without underflow for small shapes,
/// using `G(a) = G(a + 1) · U^{1/a}`.
pub fn sample_log_gamma(rng: &mut RngState, shape: f64) -> Result<f64> {
    if shape >= 1.0 {
        return Ok(sample_gamma(rng, shape)?.ln());
    }
    let boosted = sample_gamma(rng, shape + 1.0)?;
    Ok(boosted.ln() + rng.open_unit().ln() / shape)
}

/// Draws a probability vector from `Dir(alpha)` by normalizing independent
/// Gamma variates. Zero entries of `alpha` give exactly zero weight.
pub fn sample_dirichlet(rng: &mut RngState, alpha: &[f64]) -> Result<Vec<f64>> {
    let logs = sample_log_dirichlet(rng, alpha)?;
    Ok(logs.into_iter().map(f64::exp).collect())
}

/// Like [`sample_dirichlet`] but returns `ln π`, with `−∞` at zero-count slots.
pub fn sample_log_dirichlet(rng: &mut RngState, alpha: &[f64]) -> Result<Vec<f64>> {
    if let Some(a) = alpha.iter().find(|a| !(**a >= 0.0) || !a.is_finite()) {
        return Err(Error::arg(format!("pseudo-count {a} is negative or non-finite")));
    }
    if !alpha.iter().any(|a| *a > 0.0) {
        return Err(Error::arg("all pseudo-counts are zero"));
    }
    let mut logs = Vec::with_capacity(alpha.len());
    for &a in alpha {
        logs.push(if a > 0.0 {
            sample_log_gamma(rng, a)?
        } else {
            f64::NEG_INFINITY
        });
    }
    let norm = crate::special::log_sum_exp(&logs)?;
    for l in &mut logs {
        *l -= norm;
    }
    // a single live slot is exactly 1
    if alpha.iter().filter(|a| **a > 0.0).count() == 1 {
        for (l, a) in logs.iter_mut().zip(alpha) {
            if *a > 0.0 {
                *l = 0.0;
            }
        }
    }
    Ok(logs)
}

/// Uniform integer in `0..n`.
pub fn uniform_index(rng: &mut RngState, n: usize) -> usize {
    rng.random_range(0..n)
}

#[cfg(test)]
mod tests {
    use super::*;

    const N: usize = 1_000_000;

    #[test]
    fn same_seed_and_stream_reproduce_bitwise() {
        let mut a = RngState::new(7, 3);
        let mut b = RngState::new(7, 3);
        let mut c = RngState::new(7, 4);
        let xa: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..16).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn fixed_noise_gaussian() {
        assert_eq!(gaussian_from_noise(&[0.0, 0.0], &[1.0, 1.0], &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(
            gaussian_from_noise(&[3.0, -1.0], &[2.0, 0.5], &[1.0, -2.0]).unwrap(),
            vec![5.0, -2.0]
        );
        assert!(gaussian_from_noise(&[0.0], &[0.0], &[1.0]).is_err());
        let mut rng = RngState::new(1, 0);
        assert!(sample_gaussian(&mut rng, &[0.0], &[-1.0]).is_err());
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = RngState::new(11, 0);
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..N {
            let x = sample_gaussian(&mut rng, &[1.0], &[2.0]).unwrap()[0];
            sum += x;
            let z = (x - 1.0) / 2.0;
            sq += z * z;
        }
        let mean = sum / N as f64;
        assert!((mean - 1.0).abs() < 3.0 * 2.0 / 1000.0, "mean {mean}");
        let var = sq / N as f64;
        assert!((var - 1.0).abs() < 8.0 / (N as f64).sqrt(), "var {var}");
    }

    #[test]
    fn gamma_moments() {
        let mut rng = RngState::new(12, 0);
        let mean1 = (0..N).map(|_| sample_gamma(&mut rng, 1.0).unwrap()).sum::<f64>() / N as f64;
        assert!((mean1 - 1.0).abs() < 3.0 / 1000.0, "mean {mean1}");

        let draws: Vec<f64> = (0..N).map(|_| sample_gamma(&mut rng, 5.0).unwrap()).collect();
        let m = draws.iter().sum::<f64>() / N as f64;
        let v = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (N - 1) as f64;
        // sd of the sample variance for Gamma(5): sqrt((mu4 - sigma^4) / N), mu4 = 3k^2 + 6k
        let se = ((3.0 * 25.0 + 30.0 - 25.0) / N as f64).sqrt();
        assert!((v - 5.0).abs() < 4.0 * se, "var {v}");
        assert!(sample_gamma(&mut rng, 0.0).is_err());
    }

    #[test]
    fn log_gamma_sampler_matches_mean_for_small_shape() {
        let mut rng = RngState::new(13, 0);
        let n = 200_000;
        let mean = (0..n).map(|_| sample_log_gamma(&mut rng, 0.3).unwrap().exp()).sum::<f64>() / n as f64;
        let se = (0.3f64 / n as f64).sqrt();
        assert!((mean - 0.3).abs() < 4.0 * se, "mean {mean}");
    }

    #[test]
    fn dirichlet_degenerate_cases() {
        let mut rng = RngState::new(14, 0);
        assert_eq!(sample_dirichlet(&mut rng, &[2.7]).unwrap(), vec![1.0]);
        for _ in 0..1000 {
            let pi = sample_dirichlet(&mut rng, &[2.0, 0.0, 2.0]).unwrap();
            assert_eq!(pi[1], 0.0);
            assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(sample_dirichlet(&mut rng, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn dirichlet_moments() {
        let mut rng = RngState::new(15, 0);
        let mean = (0..N).map(|_| sample_dirichlet(&mut rng, &[1.0, 1.0]).unwrap()[0]).sum::<f64>() / N as f64;
        assert!((mean - 0.5).abs() < 0.002, "mean {mean}");

        let alpha = [0.5, 2.0, 3.5];
        let total: f64 = alpha.iter().sum();
        let n = 100_000;
        let mut sums = [0.0; 3];
        for _ in 0..n {
            for (s, p) in sums.iter_mut().zip(sample_dirichlet(&mut rng, &alpha).unwrap()) {
                *s += p;
            }
        }
        for (i, a) in alpha.iter().enumerate() {
            let p = a / total;
            let se = (p * (1.0 - p) / (total + 1.0) / n as f64).sqrt();
            assert!((sums[i] / n as f64 - p).abs() < 4.0 * se);
        }
    }
}
