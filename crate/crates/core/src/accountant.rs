//! Aggregation of pairwise divergences into worst-case RDP and Bayesian-DP
//! budgets.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::renyi::RenyiOrder;
use crate::special::log_sum_exp;

/// Log-spaced default orders for [`bdp_optimize`].
pub const DEFAULT_LAMBDA_GRID: [f64; 8] = [1.1, 1.5, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];

pub fn default_lambda_grid() -> Vec<RenyiOrder> {
    DEFAULT_LAMBDA_GRID.iter().map(|&l| RenyiOrder::new(l).unwrap()).collect()
}

/// Entry `(i, j)` holds D_λ(Qᵢ‖Qⱼ). Entries may be left unpopulated when
/// pairs are subsampled; unpopulated entries are skipped by every summary.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseRDMatrix {
    m: usize,
    values: Vec<Option<f64>>,
    lambda: RenyiOrder,
}

impl PairwiseRDMatrix {
    pub fn empty(m: usize, lambda: RenyiOrder) -> Self {
        PairwiseRDMatrix {
            m,
            values: vec![None; m * m],
            lambda,
        }
    }

    /// A fully populated matrix from row-major values.
    pub fn from_dense(m: usize, values: Vec<f64>, lambda: RenyiOrder) -> Result<Self> {
        if values.len() != m * m {
            return Err(Error::arg(format!("{} values do not form a {m}×{m} matrix", values.len())));
        }
        let mut out = Self::empty(m, lambda);
        for (k, v) in values.into_iter().enumerate() {
            out.set(k / m, k % m, v)?;
        }
        Ok(out)
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) -> Result<()> {
        if i >= self.m || j >= self.m {
            return Err(Error::arg(format!("index ({i}, {j}) outside a {0}×{0} matrix", self.m)));
        }
        if value.is_nan() || value < -1e-9 {
            return Err(Error::Numerical(format!("divergence ({i}, {j}) = {value}")));
        }
        self.values[i * self.m + j] = Some(value.max(0.0));
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.m + j]
    }

    pub fn size(&self) -> usize {
        self.m
    }

    pub fn lambda(&self) -> RenyiOrder {
        self.lambda
    }

    /// Populated off-diagonal entries of row `i`.
    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.m).filter(|&j| j != i).filter_map(|j| self.get(i, j)).collect()
    }

    fn off_diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.m)
            .flat_map(move |i| (0..self.m).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .filter_map(|(i, j)| self.get(i, j))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdpSummary {
    pub rd_max: f64,
    pub rd_avg: f64,
    pub infinite_pair_count: usize,
}

/// Maximum over populated off-diagonal entries, mean over the finite ones.
pub fn rdp_summary(m: &PairwiseRDMatrix) -> Result<RdpSummary> {
    if m.size() < 2 {
        return Err(Error::arg("need at least two examples"));
    }
    let (mut max, mut sum, mut finite, mut infinite, mut any) = (0.0f64, 0.0, 0usize, 0usize, false);
    for v in m.off_diagonal() {
        any = true;
        max = max.max(v);
        if v.is_finite() {
            sum += v;
            finite += 1;
        } else {
            infinite += 1;
        }
    }
    if !any {
        return Err(Error::arg("no off-diagonal entries are populated"));
    }
    Ok(RdpSummary {
        rd_max: max,
        rd_avg: if finite > 0 { sum / finite as f64 } else { 0.0 },
        infinite_pair_count: infinite,
    })
}

/// `1/(λ−1)·ln mean exp((λ−1)·D) + ln(1/δ)/(λ−1)` over one example's row.
pub fn bdp_epsilon(rd_row: &[f64], lambda: RenyiOrder, delta_mu: f64) -> Result<f64> {
    if rd_row.is_empty() {
        return Err(Error::arg("empty divergence row"));
    }
    check_delta(delta_mu)?;
    if rd_row.iter().any(|v| v.is_nan()) {
        return Err(Error::Numerical("NaN divergence in row".into()));
    }
    let lm1 = lambda.value() - 1.0;
    let tail = (1.0 / delta_mu).ln() / lm1;
    if rd_row.contains(&f64::INFINITY) {
        return Ok(f64::INFINITY);
    }
    let scaled: Vec<f64> = rd_row.iter().map(|d| lm1 * d).collect();
    let lse = log_sum_exp(&scaled)?;
    let moment = (lse - (rd_row.len() as f64).ln()) / lm1;
    Ok(moment + tail)
}

fn check_delta(delta_mu: f64) -> Result<()> {
    if delta_mu > 0.0 && delta_mu < 1.0 {
        Ok(())
    } else {
        Err(Error::arg(format!("delta_mu must lie in (0, 1), got {delta_mu}")))
    }
}

/// Worst case of [`bdp_epsilon`] over the rows of `m` that have at least
/// one populated off-diagonal entry.
pub fn worst_case_bdp_epsilon(m: &PairwiseRDMatrix, delta_mu: f64) -> Result<f64> {
    let mut worst: Option<f64> = None;
    for i in 0..m.size() {
        let row = m.row(i);
        if row.is_empty() {
            continue;
        }
        let e = bdp_epsilon(&row, m.lambda(), delta_mu)?;
        worst = Some(worst.map_or(e, |w| w.max(e)));
    }
    worst.ok_or_else(|| Error::arg("no populated rows"))
}

mod ext_real {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            Repr::Text("inf".into()).serialize(s)
        } else {
            Repr::Num(*v).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
        }
    }

    pub mod vec {
        use super::*;

        #[derive(Serialize, Deserialize)]
        struct Wrap(#[serde(with = "super")] f64);

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            s.collect_seq(v.iter().map(|x| Wrap(*x)))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Ok(Vec::<Wrap>::deserialize(d)?.into_iter().map(|w| w.0).collect())
        }
    }
}

/// Privacy budget of one release, as written to JSON and CSV.
///
/// Infinite values serialize as the string `"inf"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub dataset: String,
    pub lambda: RenyiOrder,
    pub delta_mu: f64,
    #[serde(with = "ext_real")]
    pub rd_max: f64,
    pub rd_avg: f64,
    #[serde(with = "ext_real")]
    pub epsilon_mu: f64,
    pub n_examples: usize,
    pub epsilon_alpha_floor: f64,
    /// Orders scanned by [`bdp_optimize`]; just `lambda` otherwise.
    pub lambda_grid: Vec<RenyiOrder>,
    /// ε_μ at each order of `lambda_grid`.
    #[serde(with = "ext_real::vec")]
    pub epsilon_grid: Vec<f64>,
    pub infinite_pair_count: usize,
    /// Sharing mechanism audited, when known.
    #[serde(default)]
    pub mechanism: String,
    /// Populated off-diagonal (ordered) entries behind the summary.
    #[serde(default)]
    pub ordered_pairs: usize,
    /// Cap on unordered pairs when the audit subsampled them.
    #[serde(default)]
    pub max_pairs: Option<usize>,
}

pub const CSV_HEADER: &str = "dataset,lambda,delta_mu,rd_max,rd_avg,epsilon_mu,infinite_pairs,epsilon_alpha_floor";

fn fmt_ext(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v}")
    }
}

impl PrivacyReport {
    /// Fixed-order report for a pairwise matrix.
    pub fn from_matrix(
        m: &PairwiseRDMatrix,
        delta_mu: f64,
        dataset: impl Into<String>,
        epsilon_alpha_floor: f64,
    ) -> Result<Self> {
        check_delta(delta_mu)?;
        let summary = rdp_summary(m)?;
        let epsilon_mu = worst_case_bdp_epsilon(m, delta_mu)?;
        Ok(PrivacyReport {
            dataset: dataset.into(),
            lambda: m.lambda(),
            delta_mu,
            rd_max: summary.rd_max,
            rd_avg: summary.rd_avg,
            epsilon_mu,
            n_examples: m.size(),
            epsilon_alpha_floor,
            lambda_grid: vec![m.lambda()],
            epsilon_grid: vec![epsilon_mu],
            infinite_pair_count: summary.infinite_pair_count,
            mechanism: String::new(),
            ordered_pairs: m.off_diagonal().count(),
            max_pairs: None,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Numerical(format!("report serialization: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(e.column() as u64, e.to_string()))
    }

    /// One CSV row in [`CSV_HEADER`] order. The dataset name is quoted when
    /// it contains a comma or quote.
    pub fn csv_row(&self) -> String {
        let name = if self.dataset.contains([',', '"', '\n']) {
            format!("\"{}\"", self.dataset.replace('"', "\"\""))
        } else {
            self.dataset.clone()
        };
        let mut out = String::new();
        write!(
            out,
            "{name},{},{},{},{},{},{},{}",
            self.lambda.value(),
            self.delta_mu,
            fmt_ext(self.rd_max),
            self.rd_avg,
            fmt_ext(self.epsilon_mu),
            self.infinite_pair_count,
            self.epsilon_alpha_floor
        )
        .unwrap();
        out
    }
}

/// Scans `lambda_grid` and reports at the order minimizing the worst-case
/// ε_μ. Ties go to the earliest order.
pub fn bdp_optimize<F>(
    mut rd_rows_fn: F,
    lambda_grid: &[RenyiOrder],
    delta_mu: f64,
    dataset: &str,
    epsilon_alpha_floor: f64,
) -> Result<PrivacyReport>
where
    F: FnMut(RenyiOrder) -> Result<PairwiseRDMatrix>,
{
    if lambda_grid.is_empty() {
        return Err(Error::arg("empty lambda grid"));
    }
    check_delta(delta_mu)?;
    let mut best: Option<PrivacyReport> = None;
    let mut eps_grid = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let m = rd_rows_fn(lambda)?;
        if m.lambda() != lambda {
            return Err(Error::arg("matrix order does not match the requested order"));
        }
        let report = PrivacyReport::from_matrix(&m, delta_mu, dataset, epsilon_alpha_floor)?;
        eps_grid.push(report.epsilon_mu);
        if best.as_ref().is_none_or(|b| report.epsilon_mu < b.epsilon_mu) {
            best = Some(report);
        }
    }
    let mut best = best.unwrap();
    best.lambda_grid = lambda_grid.to_vec();
    best.epsilon_grid = eps_grid;
    Ok(best)
}
