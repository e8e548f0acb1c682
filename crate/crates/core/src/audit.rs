//! Pairwise privacy audits of a set of posteriors under one of the four
//! sharing mechanisms.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rayon::prelude::*;

use crate::accountant::{bdp_optimize, default_lambda_grid, PairwiseRDMatrix, PrivacyReport};
use crate::error::{Error, Result};
use crate::posterior::{pad_to_length, DPPosterior};
use crate::renyi::{rd_dp_posteriors, rd_gaussian_diag, rd_gaussian_isotropic, rd_gaussian_learned, RenyiOrder};
use crate::sampling::RngState;

/// Pseudo-count given to padding components.
pub const DEFAULT_PAD_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub enum Mechanism {
    /// Weighted-vector samples from the DP posterior.
    Nvdp,
    /// Independent per-token Gaussians; shorter sequences are padded with
    /// the prior component.
    Vtdp,
    /// Isotropic Gaussian noise of fixed scale on the pooled token mean.
    VibFixed { sigma: f64 },
    /// Input-independent diagonal Gaussian noise on the pooled token mean.
    VibLearned { sigma: Vec<f64> },
}

impl Mechanism {
    pub fn name(&self) -> &'static str {
        match self {
            Mechanism::Nvdp => "nvdp",
            Mechanism::Vtdp => "vtdp",
            Mechanism::VibFixed { .. } => "vib-fixed",
            Mechanism::VibLearned { .. } => "vib-learned",
        }
    }
}

/// Mechanism names without their noise parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MechanismKind {
    Nvdp,
    Vtdp,
    VibFixed,
    VibLearned,
}

impl FromStr for MechanismKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nvdp" => Ok(MechanismKind::Nvdp),
            "vtdp" => Ok(MechanismKind::Vtdp),
            "vib-fixed" => Ok(MechanismKind::VibFixed),
            "vib-learned" => Ok(MechanismKind::VibLearned),
            other => Err(Error::arg(format!(
                "unknown mechanism {other:?} (expected nvdp, vtdp, vib-fixed or vib-learned)"
            ))),
        }
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MechanismKind::Nvdp => "nvdp",
            MechanismKind::Vtdp => "vtdp",
            MechanismKind::VibFixed => "vib-fixed",
            MechanismKind::VibLearned => "vib-learned",
        })
    }
}

/// Settings of one audit.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditConfig {
    pub mechanism: Mechanism,
    pub lambda: RenyiOrder,
    pub delta_mu: f64,
    pub pad_floor: f64,
    pub optimize_lambda: bool,
    /// Cap on the number of unordered pairs; each sampled pair is evaluated
    /// in both directions.
    pub max_pairs: Option<usize>,
    /// Seeds the pair subsample.
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            mechanism: Mechanism::Nvdp,
            lambda: RenyiOrder::new(1.1).unwrap(),
            delta_mu: 1e-5,
            pad_floor: DEFAULT_PAD_FLOOR,
            optimize_lambda: false,
            max_pairs: None,
            seed: 0,
        }
    }
}

/// Divergence D_λ(Qᵢ‖Qⱼ) under `mechanism`.
pub fn pair_divergence(
    qi: &DPPosterior,
    qj: &DPPosterior,
    mechanism: &Mechanism,
    order: RenyiOrder,
    pad_floor: f64,
) -> Result<f64> {
    if qi.d() != qj.d() {
        return Err(Error::arg(format!("posterior dimensions differ: {} vs {}", qi.d(), qj.d())));
    }
    match mechanism {
        Mechanism::Nvdp => {
            let n = qi.n().max(qj.n());
            let a = pad_to_length(qi, n, pad_floor)?;
            let b = pad_to_length(qj, n, pad_floor)?;
            Ok(rd_dp_posteriors(&a, &b, order)?.value)
        }
        Mechanism::Vtdp => {
            let n = qi.n().max(qj.n());
            fn token(q: &DPPosterior, t: usize) -> (&[f64], &[f64]) {
                let i = t.min(q.n());
                (q.mu(i), q.sigma(i))
            }
            let mut total = 0.0;
            for t in 0..n {
                let (mu, s) = token(qi, t);
                let (mp, sp) = token(qj, t);
                total += rd_gaussian_diag(mu, s, mp, sp, order)?.value;
            }
            Ok(total)
        }
        Mechanism::VibFixed { sigma } => {
            rd_gaussian_isotropic(&qi.pooled_token_mean(), &qj.pooled_token_mean(), *sigma, order)
        }
        Mechanism::VibLearned { sigma } => {
            if sigma.len() != qi.d() {
                return Err(Error::arg(format!("sigma vector has {} entries, posteriors have d = {}", sigma.len(), qi.d())));
            }
            rd_gaussian_learned(&qi.pooled_token_mean(), &qj.pooled_token_mean(), sigma, order)
        }
    }
}

/// Unordered pairs `i < j` to audit: all of them, or a uniform subsample
/// of `max_pairs`, in increasing order.
pub fn select_pairs(m: usize, max_pairs: Option<usize>, rng: &mut RngState) -> Vec<(usize, usize)> {
    let total = m * m.saturating_sub(1) / 2;
    let unrank = |mut k: usize| {
        // row i holds m − 1 − i pairs
        let mut i = 0;
        while k >= m - 1 - i {
            k -= m - 1 - i;
            i += 1;
        }
        (i, i + 1 + k)
    };
    match max_pairs {
        Some(cap) if cap < total => {
            let mut ks = sample(rng, total, cap).into_vec();
            ks.sort_unstable();
            ks.into_iter().map(unrank).collect()
        }
        _ => (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect(),
    }
}

/// Both directions of every listed pair, evaluated in parallel.
pub fn pairwise_matrix(
    posteriors: &[DPPosterior],
    pairs: &[(usize, usize)],
    mechanism: &Mechanism,
    order: RenyiOrder,
    pad_floor: f64,
) -> Result<PairwiseRDMatrix> {
    let m = posteriors.len();
    let values: Vec<Result<(usize, usize, f64, f64)>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            if i >= m || j >= m || i == j {
                return Err(Error::arg(format!("invalid pair ({i}, {j}) for {m} posteriors")));
            }
            let fwd = pair_divergence(&posteriors[i], &posteriors[j], mechanism, order, pad_floor)?;
            let bwd = pair_divergence(&posteriors[j], &posteriors[i], mechanism, order, pad_floor)?;
            Ok((i, j, fwd, bwd))
        })
        .collect();
    let mut out = PairwiseRDMatrix::empty(m, order);
    for i in 0..m {
        out.set(i, i, 0.0)?;
    }
    for v in values {
        let (i, j, fwd, bwd) = v?;
        out.set(i, j, fwd)?;
        out.set(j, i, bwd)?;
    }
    Ok(out)
}

/// Pairwise audit and privacy report for a set of posteriors.
pub fn audit(posteriors: &[DPPosterior], config: &AuditConfig, dataset: &str) -> Result<PrivacyReport> {
    if posteriors.len() < 2 {
        return Err(Error::arg(format!("an audit needs at least 2 examples, got {}", posteriors.len())));
    }
    if !(config.pad_floor >= 0.0) || !config.pad_floor.is_finite() {
        return Err(Error::arg(format!("pad floor {} is invalid", config.pad_floor)));
    }
    match &config.mechanism {
        Mechanism::VibFixed { sigma } if !(*sigma > 0.0) => {
            return Err(Error::arg("vib-fixed needs a positive sigma"))
        }
        _ => {}
    }
    let pairs = select_pairs(posteriors.len(), config.max_pairs, &mut RngState::new(config.seed, 0));
    let matrix = |order: RenyiOrder| pairwise_matrix(posteriors, &pairs, &config.mechanism, order, config.pad_floor);
    let mut report = if config.optimize_lambda {
        bdp_optimize(matrix, &default_lambda_grid(), config.delta_mu, dataset, config.pad_floor)?
    } else {
        PrivacyReport::from_matrix(&matrix(config.lambda)?, config.delta_mu, dataset, config.pad_floor)?
    };
    report.mechanism = config.mechanism.name().to_string();
    report.max_pairs = config.max_pairs;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::{build_posterior, PriorParams, TokenParams};

    fn post(mus: &[[f64; 2]]) -> DPPosterior {
        let tokens: Vec<TokenParams> = mus
            .iter()
            .map(|m| TokenParams { alpha: 1.0, mu: m.to_vec(), sigma: vec![1.0; 2] })
            .collect();
        build_posterior(&tokens, &PriorParams::standard(2)).unwrap()
    }

    #[test]
    fn identical_posteriors_give_zero_divergence() {
        let qs = vec![post(&[[0.5, 1.0]]); 4];
        let r = audit(&qs, &AuditConfig::default(), "same").unwrap();
        assert_eq!((r.rd_max, r.rd_avg), (0.0, 0.0));
        assert!((r.epsilon_mu - 1e5f64.ln() / 0.1).abs() < 1e-9);
    }

    #[test]
    fn vib_fixed_matches_arithmetic() {
        let qs = vec![post(&[[0.0, 0.0]]), post(&[[1.0, 0.0]]), post(&[[0.0, 2.0], [0.0, 0.0]])];
        let o = RenyiOrder::new(1.1).unwrap();
        let m = pairwise_matrix(&qs, &select_pairs(3, None, &mut RngState::new(0, 0)), &Mechanism::VibFixed { sigma: 0.55 }, o, 1e-4)
            .unwrap();
        let want = |d2: f64| 1.1 * d2 / (2.0 * 0.55 * 0.55);
        assert!((m.get(0, 1).unwrap() - want(1.0)).abs() < 1e-12);
        assert!((m.get(0, 2).unwrap() - want(1.0)).abs() < 1e-12);
        assert!((m.get(1, 2).unwrap() - want(2.0)).abs() < 1e-12);
    }

    #[test]
    fn padding_floor_controls_finiteness() {
        let qs = vec![post(&[[0.0, 0.0]]), post(&[[0.0, 0.0], [0.1, 0.1]])];
        let o = RenyiOrder::new(1.1).unwrap();
        let div = |floor: f64, i: usize, j: usize| pair_divergence(&qs[i], &qs[j], &Mechanism::Nvdp, o, floor).unwrap();
        assert_eq!(div(0.0, 0, 1), f64::INFINITY);
        assert_eq!(div(0.0, 1, 0), f64::INFINITY);
        // a pad is finite against a real token only when λ·floor > (λ − 1)·α
        assert_eq!(div(1e-4, 0, 1), f64::INFINITY);
        assert!(div(1e-4, 1, 0).is_finite());
        let cfg = AuditConfig { pad_floor: 0.5, ..Default::default() };
        let r = audit(&qs, &cfg, "p").unwrap();
        assert!(r.rd_max.is_finite());
        assert_eq!(r.epsilon_alpha_floor, 0.5);
    }

    #[test]
    fn pair_subsample_is_uniform_and_deterministic() {
        let all = select_pairs(7, None, &mut RngState::new(0, 0));
        assert_eq!(all.len(), 21);
        for k in 0..21 {
            let one = select_pairs(7, Some(21), &mut RngState::new(k, 0));
            assert_eq!(one, all);
        }
        let a = select_pairs(50, Some(30), &mut RngState::new(3, 0));
        assert_eq!(a, select_pairs(50, Some(30), &mut RngState::new(3, 0)));
        assert_eq!(a.len(), 30);
        assert!(a.iter().all(|&(i, j)| i < j && j < 50));
    }

    #[test]
    fn too_few_examples() {
        assert!(audit(&[post(&[[0.0, 0.0]])], &AuditConfig::default(), "x").is_err());
    }

    #[test]
    fn mechanism_names_parse() {
        for s in ["nvdp", "vtdp", "vib-fixed", "vib-learned"] {
            assert_eq!(s.parse::<MechanismKind>().unwrap().to_string(), s);
        }
        assert!("gauss".parse::<MechanismKind>().is_err());
    }
}
