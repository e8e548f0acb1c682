//! Dirichlet-Process posteriors over weighted-vector sequences.
//!
//! A posterior for an `n`-token input holds `n + 1` components: one per
//! token, in token order, followed by the prior's component. Each component
//! carries a pseudo-count `α`, a Gaussian mean and a per-dimension standard
//! deviation. Sampling draws the weights from a Dirichlet over the
//! (κ-expanded) pseudo-counts and one Gaussian vector per slot, and emits
//! them in component order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::sampling::RngState;
use crate::special::gamma_p_inv;

/// Parameters of the Dirichlet-Process prior.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorParams {
    pub alpha0: f64,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl PriorParams {
    /// `α₀ = 1`, zero mean, unit standard deviation.
    pub fn standard(d: usize) -> Self {
        PriorParams {
            alpha0: 1.0,
            mu: vec![0.0; d],
            sigma: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0) || !self.alpha0.is_finite() {
            return Err(Error::arg(format!("prior pseudo-count {} is not positive", self.alpha0)));
        }
        if self.mu.len() != self.sigma.len() {
            return Err(Error::arg("prior mu and sigma lengths differ"));
        }
        if self.sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::arg("prior sigma must be positive"));
        }
        Ok(())
    }
}

/// Projected parameters of one token.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenParams {
    pub alpha: f64,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Posterior parameters for one input sequence, prior component last.
#[derive(Clone, Debug, PartialEq)]
pub struct DPPosterior {
    n: usize,
    d: usize,
    alpha: Vec<f64>,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    kappa: Vec<u32>,
}

impl DPPosterior {
    /// Assembles a posterior from raw component arrays (`n + 1` components,
    /// row-major `(n + 1) × d` for `mu` and `sigma`). The last component is
    /// taken to be the prior's; no check is made that it matches any
    /// particular [`PriorParams`].
    pub fn from_parts(
        d: usize,
        alpha: Vec<f64>,
        mu: Vec<f64>,
        sigma: Vec<f64>,
        kappa: Vec<u32>,
    ) -> Result<Self> {
        let k = alpha.len();
        if k == 0 {
            return Err(Error::arg("a posterior needs at least the prior component"));
        }
        if mu.len() != k * d || sigma.len() != k * d || kappa.len() != k {
            return Err(Error::arg(format!(
                "component arrays disagree: {k} pseudo-counts, {} means, {} sigmas, {} kappas, d = {d}",
                mu.len(),
                sigma.len(),
                kappa.len()
            )));
        }
        if let Some(a) = alpha.iter().find(|a| !(**a >= 0.0) || !a.is_finite()) {
            return Err(Error::arg(format!("pseudo-count {a} is negative or non-finite")));
        }
        if !(alpha.iter().sum::<f64>() > 0.0) {
            return Err(Error::arg("total pseudo-count must be positive"));
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::arg("non-finite mean"));
        }
        if let Some(s) = sigma.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::arg(format!("sigma entry {s} is not positive")));
        }
        if kappa.contains(&0) {
            return Err(Error::arg("kappa entries must be at least 1"));
        }
        Ok(DPPosterior {
            n: k - 1,
            d,
            alpha,
            mu,
            sigma,
            kappa,
        })
    }

    /// Number of token components (the prior component is extra).
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of components including the prior, `n + 1`.
    pub fn components(&self) -> usize {
        self.n + 1
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_total(&self) -> f64 {
        self.alpha.iter().sum()
    }

    pub fn mu(&self, i: usize) -> &[f64] {
        &self.mu[i * self.d..(i + 1) * self.d]
    }

    pub fn sigma(&self, i: usize) -> &[f64] {
        &self.sigma[i * self.d..(i + 1) * self.d]
    }

    pub fn kappa(&self) -> &[u32] {
        &self.kappa
    }

    /// Returns a copy with per-component sample counts replaced.
    pub fn with_kappa(mut self, kappa: Vec<u32>) -> Result<Self> {
        if kappa.len() != self.components() || kappa.contains(&0) {
            return Err(Error::arg("kappa must have one positive entry per component"));
        }
        self.kappa = kappa;
        Ok(self)
    }

    /// Total number of sampled slots, Σκᵢ.
    pub fn slots(&self) -> usize {
        self.kappa.iter().map(|&k| k as usize).sum()
    }

    /// Per-slot pseudo-counts αᵢ/κᵢ repeated κᵢ times, and the component of
    /// each slot.
    pub fn slot_alphas(&self) -> (Vec<f64>, Vec<usize>) {
        let mut alphas = Vec::with_capacity(self.slots());
        let mut owner = Vec::with_capacity(self.slots());
        for (i, (&a, &k)) in self.alpha.iter().zip(&self.kappa).enumerate() {
            for _ in 0..k {
                alphas.push(a / k as f64);
                owner.push(i);
            }
        }
        (alphas, owner)
    }

    /// Mean of the token components' means; the prior mean when `n = 0`.
    pub fn pooled_token_mean(&self) -> Vec<f64> {
        let count = self.n.max(1);
        let rows = if self.n == 0 { 0..1 } else { 0..self.n };
        let mut out = vec![0.0; self.d];
        for i in rows {
            for (o, m) in out.iter_mut().zip(self.mu(i)) {
                *o += m;
            }
        }
        out.iter_mut().for_each(|o| *o /= count as f64);
        out
    }
}

/// Builds the posterior for one sequence and appends the prior component.
pub fn build_posterior(tokens: &[TokenParams], prior: &PriorParams) -> Result<DPPosterior> {
    prior.validate()?;
    let d = prior.dim();
    let k = tokens.len() + 1;
    let mut alpha = Vec::with_capacity(k);
    let mut mu = Vec::with_capacity(k * d);
    let mut sigma = Vec::with_capacity(k * d);
    for (i, t) in tokens.iter().enumerate() {
        if t.mu.len() != d || t.sigma.len() != d {
            return Err(Error::arg(format!(
                "token {i} has dimension ({}, {}), expected {d}",
                t.mu.len(),
                t.sigma.len()
            )));
        }
        alpha.push(t.alpha);
        mu.extend_from_slice(&t.mu);
        sigma.extend_from_slice(&t.sigma);
    }
    alpha.push(prior.alpha0);
    mu.extend_from_slice(&prior.mu);
    sigma.extend_from_slice(&prior.sigma);
    DPPosterior::from_parts(d, alpha, mu, sigma, vec![1; k])
}

/// Inserts pad components (`α = epsilon_alpha`, `μ = 0`, `σ = 1`) before the
/// prior component until the posterior has `target_n` token components.
pub fn pad_to_length(q: &DPPosterior, target_n: usize, epsilon_alpha: f64) -> Result<DPPosterior> {
    if target_n < q.n {
        return Err(Error::arg(format!(
            "cannot pad a {}-token posterior down to {target_n}",
            q.n
        )));
    }
    if !(epsilon_alpha >= 0.0) || !epsilon_alpha.is_finite() {
        return Err(Error::arg(format!("pad pseudo-count {epsilon_alpha} is invalid")));
    }
    if target_n == q.n {
        return Ok(q.clone());
    }
    let d = q.d;
    let pads = target_n - q.n;
    let mut alpha = q.alpha[..q.n].to_vec();
    let mut mu = q.mu[..q.n * d].to_vec();
    let mut sigma = q.sigma[..q.n * d].to_vec();
    let mut kappa = q.kappa[..q.n].to_vec();
    alpha.extend(std::iter::repeat_n(epsilon_alpha, pads));
    mu.extend(std::iter::repeat_n(0.0, pads * d));
    sigma.extend(std::iter::repeat_n(1.0, pads * d));
    kappa.extend(std::iter::repeat_n(1, pads));
    alpha.push(q.alpha[q.n]);
    mu.extend_from_slice(q.mu(q.n));
    sigma.extend_from_slice(q.sigma(q.n));
    kappa.push(q.kappa[q.n]);
    DPPosterior::from_parts(d, alpha, mu, sigma, kappa)
}

/// One released sample: weights and vectors, rows in component order.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedVectorSample {
    pub pi: Vec<f64>,
    /// Row-major `m × d`.
    pub z: Vec<f64>,
    pub d: usize,
}

impl WeightedVectorSample {
    pub fn new(pi: Vec<f64>, z: Vec<f64>, d: usize) -> Result<Self> {
        if z.len() != pi.len() * d {
            return Err(Error::arg(format!(
                "{} weights but {} vector entries for d = {d}",
                pi.len(),
                z.len()
            )));
        }
        Ok(WeightedVectorSample { pi, z, d })
    }

    pub fn m(&self) -> usize {
        self.pi.len()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.z[j * self.d..(j + 1) * self.d]
    }
}

/// Base randomness of one sample: a uniform quantile level per slot for the
/// Gamma variates and a standard-normal vector per slot.
///
/// Holding this fixed makes the sample a deterministic, differentiable
/// function of the posterior parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ReparamNoise {
    pub uniforms: Vec<f64>,
    pub normals: Vec<f64>,
}

impl ReparamNoise {
    pub fn draw(rng: &mut RngState, slots: usize, d: usize) -> Self {
        let uniforms = (0..slots).map(|_| rng.open_unit()).collect();
        let normals = (0..slots * d).map(|_| rng.standard_normal()).collect();
        ReparamNoise { uniforms, normals }
    }

    /// Zero Gaussian noise with the given quantile levels.
    pub fn zero_gaussian(uniforms: Vec<f64>, d: usize) -> Self {
        let normals = vec![0.0; uniforms.len() * d];
        ReparamNoise { uniforms, normals }
    }
}

/// Draws one weighted-vector sample from `q`.
pub fn sample_embedding(q: &DPPosterior, rng: &mut RngState) -> Result<WeightedVectorSample> {
    let noise = ReparamNoise::draw(rng, q.slots(), q.d);
    sample_with_noise(q, &noise)
}

/// The sample determined by fixed base noise: Gamma variates by inverse CDF,
/// normalized to the weights, and `μ + σ ⊙ ε` per slot.
pub fn sample_with_noise(q: &DPPosterior, noise: &ReparamNoise) -> Result<WeightedVectorSample> {
    let m = q.slots();
    let d = q.d;
    if noise.uniforms.len() != m || noise.normals.len() != m * d {
        return Err(Error::arg(format!(
            "noise shaped for {} slots, posterior has {m}",
            noise.uniforms.len()
        )));
    }
    let (alphas, owner) = q.slot_alphas();
    let mut gammas = Vec::with_capacity(m);
    for (&a, &u) in alphas.iter().zip(&noise.uniforms) {
        gammas.push(if a > 0.0 { gamma_p_inv(a, u)? } else { 0.0 });
    }
    let total: f64 = gammas.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Numerical(format!("Gamma variates sum to {total}")));
    }
    let pi = if alphas.iter().filter(|a| **a > 0.0).count() == 1 {
        alphas.iter().map(|a| if *a > 0.0 { 1.0 } else { 0.0 }).collect()
    } else {
        gammas.iter().map(|g| g / total).collect()
    };
    let mut z = Vec::with_capacity(m * d);
    for (j, &i) in owner.iter().enumerate() {
        let eps = &noise.normals[j * d..(j + 1) * d];
        for ((m_, s), e) in q.mu(i).iter().zip(q.sigma(i)).zip(eps) {
            z.push(m_ + s * e);
        }
    }
    WeightedVectorSample::new(pi, z, d)
}

const POSTERIOR_MAGIC: &[u8; 5] = b"NVDPQ";
const POSTERIOR_VERSION: u8 = b'1';

/// Encodes `q` in the `.dpq` layout: `NVDPQ1`, little-endian `u32` n and d,
/// then per component `α, μ[0..d), σ[0..d)` as little-endian `f64`.
///
/// The layout has no field for κ, so only posteriors with all `κᵢ = 1` are
/// representable.
pub fn serialize_posterior(q: &DPPosterior) -> Result<Vec<u8>> {
    if q.kappa.iter().any(|&k| k != 1) {
        return Err(Error::arg("the .dpq layout only stores posteriors with unit kappa"));
    }
    let n = u32::try_from(q.n).map_err(|_| Error::arg("token count exceeds u32"))?;
    let d = u32::try_from(q.d).map_err(|_| Error::arg("dimension exceeds u32"))?;
    let mut out = Vec::with_capacity(14 + q.components() * (1 + 2 * q.d) * 8);
    out.extend_from_slice(POSTERIOR_MAGIC);
    out.push(POSTERIOR_VERSION);
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    for i in 0..q.components() {
        out.extend_from_slice(&q.alpha[i].to_le_bytes());
        for v in q.mu(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in q.sigma(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn deserialize_posterior(bytes: &[u8]) -> Result<DPPosterior> {
    if bytes.len() < 6 {
        return Err(Error::format(0, format!("{} bytes is too short for a header", bytes.len())));
    }
    if &bytes[..5] != POSTERIOR_MAGIC {
        return Err(Error::format(0, "bad magic, expected NVDPQ1"));
    }
    if bytes[5] != POSTERIOR_VERSION {
        return Err(Error::format(5, format!("unsupported version byte {:?}", bytes[5] as char)));
    }
    if bytes.len() < 14 {
        return Err(Error::format(bytes.len() as u64, "truncated header"));
    }
    let n = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let k = n + 1;
    let expected = (k as u64) * (1 + 2 * d as u64) * 8 + 14;
    if (bytes.len() as u64) < expected {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: {} of {expected} bytes", bytes.len()),
        ));
    }
    if (bytes.len() as u64) > expected {
        return Err(Error::format(expected, "trailing bytes after payload"));
    }
    let mut values = bytes[14..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut alpha = Vec::with_capacity(k);
    let mut mu = Vec::with_capacity(k * d);
    let mut sigma = Vec::with_capacity(k * d);
    for _ in 0..k {
        alpha.push(values.next().unwrap());
        mu.extend(values.by_ref().take(d));
        sigma.extend(values.by_ref().take(d));
    }
    DPPosterior::from_parts(d, alpha, mu, sigma, vec![1; k])
        .map_err(|e| Error::format(14, format!("invalid posterior parameters: {e}")))
}

pub fn write_posterior(path: impl AsRef<Path>, q: &DPPosterior) -> Result<()> {
    let bytes = serialize_posterior(q)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_posterior(path: impl AsRef<Path>) -> Result<DPPosterior> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    deserialize_posterior(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn token(alpha: f64, mu: &[f64], sigma: &[f64]) -> TokenParams {
        TokenParams {
            alpha,
            mu: mu.to_vec(),
            sigma: sigma.to_vec(),
        }
    }

    fn two_token() -> DPPosterior {
        build_posterior(
            &[token(0.5, &[1.0, -1.0], &[0.5, 2.0]), token(1.5, &[0.0, 3.0], &[1.0, 1.0])],
            &PriorParams::standard(2),
        )
        .unwrap()
    }

    #[test]
    fn prior_only_posterior() {
        let prior = PriorParams::standard(3);
        let q = build_posterior(&[], &prior).unwrap();
        assert_eq!(q.n(), 0);
        assert_eq!(q.alpha(), &[1.0]);
        assert_eq!(q.mu(0), prior.mu.as_slice());
        assert_eq!(q.sigma(0), prior.sigma.as_slice());
    }

    #[test]
    fn total_pseudo_count_includes_prior() {
        let q = two_token();
        assert_eq!(q.alpha_total(), 3.0);
        assert_eq!(q.alpha()[2], 1.0);
        assert_eq!(q.kappa(), &[1, 1, 1]);
    }

    #[test]
    fn zero_pseudo_count_is_kept() {
        let q = build_posterior(&[token(0.0, &[1.0], &[1.0])], &PriorParams::standard(1)).unwrap();
        assert_eq!(q.components(), 2);
        let mut rng = RngState::new(3, 0);
        for _ in 0..100 {
            let s = sample_embedding(&q, &mut rng).unwrap();
            assert_eq!(s.pi[0], 0.0);
            assert_eq!(s.pi[1], 1.0);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let err = build_posterior(&[token(1.0, &[1.0], &[1.0])], &PriorParams::standard(2));
        assert!(matches!(err, Err(Error::Argument(_))));
    }

    #[test]
    fn padding() {
        let q = two_token();
        assert_eq!(pad_to_length(&q, 2, 0.0).unwrap(), q);
        let p = pad_to_length(&q, 4, 0.0).unwrap();
        assert_eq!(p.n(), 4);
        for i in 2..4 {
            assert_eq!(p.alpha()[i], 0.0);
            assert_eq!(p.mu(i), &[0.0, 0.0]);
            assert_eq!(p.sigma(i), &[1.0, 1.0]);
        }
        assert_eq!(p.alpha()[4], 1.0);
        assert_eq!(p.alpha_total(), q.alpha_total());
        let floored = pad_to_length(&q, 3, 1e-4).unwrap();
        assert_eq!(floored.alpha()[2], 1e-4);
        assert!(pad_to_length(&q, 1, 0.0).is_err());
    }

    #[test]
    fn zero_noise_sample_returns_means() {
        let q = two_token();
        let noise = ReparamNoise::zero_gaussian(vec![0.3, 0.5, 0.7], 2);
        let s = sample_with_noise(&q, &noise).unwrap();
        for i in 0..3 {
            assert_eq!(s.row(i), q.mu(i));
        }
        assert!((s.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_component_sample_has_unit_weight() {
        let q = build_posterior(&[], &PriorParams::standard(4)).unwrap();
        let mut rng = RngState::new(9, 1);
        assert_eq!(sample_embedding(&q, &mut rng).unwrap().pi, vec![1.0]);
    }

    #[test]
    fn kappa_expands_slots_in_component_order() {
        let q = two_token().with_kappa(vec![2, 1, 3]).unwrap();
        let (alphas, owner) = q.slot_alphas();
        assert_eq!(owner, vec![0, 0, 1, 2, 2, 2]);
        assert_eq!(alphas[0], 0.25);
        assert!((alphas[3] - 1.0 / 3.0).abs() < 1e-15);
        let mut rng = RngState::new(1, 1);
        let s = sample_embedding(&q, &mut rng).unwrap();
        assert_eq!(s.m(), 6);
    }

    #[test]
    fn dirichlet_weight_means() {
        let tokens = [token(1.0, &[0.0], &[1.0]), token(1.0, &[0.0], &[1.0])];
        let q = build_posterior(&tokens, &PriorParams::standard(1)).unwrap();
        let mut rng = RngState::new(21, 0);
        let n = 100_000;
        let mut sums = [0.0; 3];
        for _ in 0..n {
            let s = sample_embedding(&q, &mut rng).unwrap();
            for (acc, p) in sums.iter_mut().zip(&s.pi) {
                *acc += p;
            }
        }
        // Dir(1,1,1): var = (1/3)(2/3)/4
        let se = ((1.0 / 3.0) * (2.0 / 3.0) / 4.0 / n as f64).sqrt();
        for s in sums {
            assert!((s / n as f64 - 1.0 / 3.0).abs() < 4.0 * se);
        }
    }

    #[test]
    fn serialization_round_trip_and_errors() {
        let q = two_token();
        let bytes = serialize_posterior(&q).unwrap();
        assert_eq!(&bytes[..6], b"NVDPQ1");
        assert_eq!(deserialize_posterior(&bytes).unwrap(), q);

        let prior_only = build_posterior(&[], &PriorParams::standard(2)).unwrap();
        let b = serialize_posterior(&prior_only).unwrap();
        assert_eq!(deserialize_posterior(&b).unwrap(), prior_only);

        assert!(matches!(deserialize_posterior(&[]), Err(Error::Format { .. })));
        assert!(matches!(deserialize_posterior(&bytes[..bytes.len() - 3]), Err(Error::Format { .. })));
        let mut wrong_version = bytes.clone();
        wrong_version[5] = b'2';
        assert!(matches!(deserialize_posterior(&wrong_version), Err(Error::Format { offset: 5, .. })));
        let mut wrong_magic = bytes;
        wrong_magic[0] = b'X';
        assert!(matches!(deserialize_posterior(&wrong_magic), Err(Error::Format { offset: 0, .. })));

        let kappa = two_token().with_kappa(vec![2, 1, 1]).unwrap();
        assert!(serialize_posterior(&kappa).is_err());
    }
}
