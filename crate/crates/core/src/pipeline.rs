//! Composition of training, sanitization and auditing, and the
//! regularization-weight sweep built on it.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::accountant::PrivacyReport;
use crate::audit::{audit, AuditConfig};
use crate::embedding_io::{EmbeddingRecord, SanitizedRecord};
use crate::error::{Error, Result};
use crate::network::{
    project_posterior, sample_accuracy, sanitize, train, Example, LossWeights, ModelParams, Target, TrainConfig,
    TrainOutcome, STREAM_INIT,
};
use crate::posterior::{read_posterior, write_posterior, DPPosterior, PriorParams};
use crate::sampling::RngState;

/// Stream used for released samples under a seed.
pub const STREAM_SANITIZE: u64 = 3;

/// Default regularization-weight grid.
pub const DEFAULT_WEIGHT_GRID: [f64; 4] = [1e-3, 1e-2, 1e-1, 1.0];

/// Examples for a record set and the head width they need: `max label + 1`
/// (at least 2) for integer labels, 1 for real labels.
pub fn examples_from_records(records: &[EmbeddingRecord]) -> Result<(Vec<Example>, usize)> {
    let examples: Vec<Example> = records.iter().map(EmbeddingRecord::to_example).collect::<Result<_>>()?;
    let mut classes = None;
    let mut real = false;
    for e in &examples {
        match e.target {
            Target::Class(k) => classes = Some(classes.unwrap_or(0).max(k + 1)),
            Target::Value(_) => real = true,
        }
    }
    match (classes, real) {
        (Some(_), true) => Err(Error::arg("dataset mixes integer and real labels")),
        (Some(c), false) => Ok((examples, c.max(2))),
        _ => Ok((examples, 1)),
    }
}

/// Posteriors of every record under `params`, in record order.
pub fn posteriors_for(records: &[EmbeddingRecord], params: &ModelParams, prior: &PriorParams) -> Result<Vec<DPPosterior>> {
    check_dim(records, params)?;
    records.iter().map(|r| project_posterior(&r.x_f64(), params, prior)).collect()
}

/// One released sample per record, drawn in record order from a single
/// stream of `seed`.
pub fn sanitize_records(
    records: &[EmbeddingRecord],
    params: &ModelParams,
    prior: &PriorParams,
    seed: u64,
) -> Result<Vec<SanitizedRecord>> {
    check_dim(records, params)?;
    let mut rng = RngState::new(seed, STREAM_SANITIZE);
    records
        .iter()
        .map(|r| {
            Ok(SanitizedRecord {
                id: r.id.clone(),
                sample: sanitize(&r.x_f64(), params, prior, &mut rng)?,
            })
        })
        .collect()
}

fn check_dim(records: &[EmbeddingRecord], params: &ModelParams) -> Result<()> {
    match records.iter().find(|r| r.d != params.d) {
        Some(r) => Err(Error::format(
            0,
            format!("record {} has d = {}, checkpoint expects {}", r.id, r.d, params.d),
        )),
        None => Ok(()),
    }
}

const ARCHIVE_INDEX: &str = "index.txt";

/// Writes one `.dpq` file per posterior into `dir`, named by position, with
/// an `index.txt` of `file<TAB>id` lines in the same order.
pub fn write_posterior_archive(dir: impl AsRef<Path>, ids: &[String], posteriors: &[DPPosterior]) -> Result<()> {
    if ids.len() != posteriors.len() {
        return Err(Error::arg("one id per posterior is required"));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut index = String::new();
    for (k, (id, q)) in ids.iter().zip(posteriors).enumerate() {
        if id.contains(['\t', '\n']) {
            return Err(Error::arg(format!("record id {id:?} contains a tab or newline")));
        }
        let file = format!("{k:06}.dpq");
        write_posterior(dir.join(&file), q)?;
        writeln!(index, "{file}\t{id}").unwrap();
    }
    fs::write(dir.join(ARCHIVE_INDEX), index)?;
    Ok(())
}

/// Reads an archive in index order.
pub fn read_posterior_archive(dir: impl AsRef<Path>) -> Result<Vec<(String, DPPosterior)>> {
    let dir = dir.as_ref();
    let index = fs::read_to_string(dir.join(ARCHIVE_INDEX))?;
    let mut offset = 0u64;
    let mut out = Vec::new();
    for line in index.lines() {
        let (file, id) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(offset, format!("index line {line:?} lacks a tab")))?;
        if file.contains(['/', '\\']) || file == ".." {
            return Err(Error::format(offset, format!("index entry {file:?} is not a plain file name")));
        }
        out.push((id.to_string(), read_posterior(dir.join(file))?));
        offset += line.len() as u64 + 1;
    }
    Ok(out)
}

/// Grid, seeds and fixed settings of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub lambda_d: Vec<f64>,
    pub lambda_g: Vec<f64>,
    /// Pair `lambda_d[k]` with `lambda_g[k]` instead of taking the product.
    pub tied: bool,
    pub seeds: Vec<u64>,
    pub heads: usize,
    /// `seed` is overridden per cell.
    pub train: TrainConfig,
    pub audit: AuditConfig,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            lambda_d: DEFAULT_WEIGHT_GRID.to_vec(),
            lambda_g: DEFAULT_WEIGHT_GRID.to_vec(),
            tied: false,
            seeds: vec![0],
            heads: 1,
            train: TrainConfig::default(),
            audit: AuditConfig::default(),
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_d.is_empty() || self.lambda_g.is_empty() || self.seeds.is_empty() {
            return Err(Error::arg("sweep grids and seed list must be non-empty"));
        }
        if self.tied && self.lambda_d.len() != self.lambda_g.len() {
            return Err(Error::arg("tied grids must have equal length"));
        }
        for &w in self.lambda_d.iter().chain(&self.lambda_g) {
            LossWeights::new(w, 0.0)?;
        }
        self.train.validate()
    }

    /// `(λ_D, λ_G, seed)` for every cell, seeds innermost.
    pub fn cells(&self) -> Vec<(f64, f64, u64)> {
        let pairs: Vec<(f64, f64)> = if self.tied {
            self.lambda_d.iter().copied().zip(self.lambda_g.iter().copied()).collect()
        } else {
            self.lambda_d
                .iter()
                .flat_map(|&a| self.lambda_g.iter().map(move |&b| (a, b)))
                .collect()
        };
        pairs
            .into_iter()
            .flat_map(|(a, b)| self.seeds.iter().map(move |&s| (a, b, s)))
            .collect()
    }
}

/// Everything produced for one configuration and seed.
#[derive(Clone, Debug)]
pub struct CellRun {
    pub weights: LossWeights,
    pub seed: u64,
    pub outcome: TrainOutcome,
    pub sanitized: Vec<SanitizedRecord>,
    /// Head accuracy on the sanitized validation samples.
    pub accuracy: f64,
    pub report: PrivacyReport,
}

/// Trains from the seed's initialization, sanitizes the validation set
/// under the same seed, scores the head on the released samples and audits
/// the validation posteriors.
pub fn run_cell(
    train_set: &[EmbeddingRecord],
    val_set: &[EmbeddingRecord],
    weights: LossWeights,
    seed: u64,
    heads: usize,
    train_config: &TrainConfig,
    audit_config: &AuditConfig,
) -> Result<CellRun> {
    let (train_examples, c_train) = examples_from_records(train_set)?;
    let (val_examples, c_val) = examples_from_records(val_set)?;
    let d = train_set.first().map(|r| r.d).ok_or_else(|| Error::arg("empty training set"))?;
    let c = c_train.max(c_val);
    if (c == 1) != (c_train == 1) {
        return Err(Error::arg("training and validation labels disagree in kind"));
    }
    let prior = PriorParams::standard(d);
    let initial = ModelParams::init(d, heads, c, &mut RngState::new(seed, STREAM_INIT))?;
    let config = TrainConfig { seed, ..train_config.clone() };
    let outcome = train(&train_examples, &val_examples, initial, &prior, &config, weights)?;
    let sanitized = sanitize_records(val_set, &outcome.params, &prior, seed)?;
    let samples: Vec<_> = sanitized.iter().map(|r| r.sample.clone()).collect();
    let targets: Vec<Target> = val_examples.iter().map(|e| e.target).collect();
    let accuracy = sample_accuracy(&samples, &targets, &outcome.params)?;
    let posteriors = posteriors_for(val_set, &outcome.params, &prior)?;
    let report = audit(&posteriors, audit_config, "validation")?;
    Ok(CellRun { weights, seed, outcome, sanitized, accuracy, report })
}

/// One line of the trade-off table.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub lambda_d: f64,
    pub lambda_g: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub rd_max: f64,
    pub rd_avg: f64,
    pub epsilon_mu: f64,
    pub aborted: Option<String>,
}

impl SweepRow {
    fn from_run(run: &CellRun) -> Self {
        SweepRow {
            lambda_d: run.weights.lambda_d,
            lambda_g: run.weights.lambda_g,
            seed: run.seed,
            accuracy: run.accuracy,
            rd_max: run.report.rd_max,
            rd_avg: run.report.rd_avg,
            epsilon_mu: run.report.epsilon_mu,
            aborted: run.outcome.aborted.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CellFailure {
    pub lambda_d: f64,
    pub lambda_g: f64,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<CellFailure>,
}

/// Runs every cell; a failing cell is recorded and the sweep continues.
/// `progress` sees each cell as it finishes.
pub fn sweep(
    train_set: &[EmbeddingRecord],
    val_set: &[EmbeddingRecord],
    spec: &SweepSpec,
    mut progress: impl FnMut(std::result::Result<&SweepRow, &CellFailure>),
) -> Result<SweepResult> {
    spec.validate()?;
    let mut out = SweepResult::default();
    for (a, b, seed) in spec.cells() {
        let run = LossWeights::new(a, b)
            .and_then(|w| run_cell(train_set, val_set, w, seed, spec.heads, &spec.train, &spec.audit));
        match run {
            Ok(run) => {
                out.rows.push(SweepRow::from_run(&run));
                progress(Ok(out.rows.last().unwrap()));
            }
            Err(e) => {
                out.failures.push(CellFailure { lambda_d: a, lambda_g: b, seed, error: e.to_string() });
                progress(Err(out.failures.last().unwrap()));
            }
        }
    }
    Ok(out)
}

pub const SWEEP_HEADER: &str = "lambda_d,lambda_g,seed,accuracy,rd_max,rd_avg,epsilon_mu";
pub const PLOT_HEADER: &str = "epsilon_mu,accuracy";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.lambda_d,
            r.lambda_g,
            r.seed,
            r.accuracy,
            fmt_ext(r.rd_max),
            fmt_ext(r.rd_avg),
            fmt_ext(r.epsilon_mu)
        )
        .unwrap();
    }
    out
}

/// `(ε_μ, accuracy)` points, one per row.
pub fn plot_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{PLOT_HEADER}\n");
    for r in rows {
        writeln!(out, "{},{}", fmt_ext(r.epsilon_mu), r.accuracy).unwrap();
    }
    out
}

fn fmt_ext(v: f64) -> String {
    if v == f64::INFINITY { "inf".into() } else { v.to_string() }
}

/// Median of the finite-or-infinite values; `None` for an empty slice.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[k] } else { 0.5 * (v[k - 1] + v[k]) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding_io::{generate_synthetic, Label, SyntheticConfig};

    fn data(n: usize, seed: u64) -> Vec<EmbeddingRecord> {
        generate_synthetic(&SyntheticConfig { n_examples: n, d: 4, n_range: (2, 4), seed, ..Default::default() })
            .unwrap()
    }

    #[test]
    fn class_count_from_labels() {
        let recs = data(10, 0);
        assert_eq!(examples_from_records(&recs).unwrap().1, 2);
        let mut real = recs.clone();
        for r in &mut real {
            r.label = Label::Real(0.5);
        }
        assert_eq!(examples_from_records(&real).unwrap().1, 1);
        real[0].label = Label::Int(0);
        assert!(examples_from_records(&real).is_err());
    }

    #[test]
    fn cells_product_and_tied() {
        let mut spec = SweepSpec { lambda_d: vec![1.0, 2.0], lambda_g: vec![3.0, 4.0], seeds: vec![7, 8], ..Default::default() };
        assert_eq!(spec.cells().len(), 8);
        spec.tied = true;
        assert_eq!(spec.cells(), vec![(1.0, 3.0, 7), (1.0, 3.0, 8), (2.0, 4.0, 7), (2.0, 4.0, 8)]);
        spec.lambda_d.clear();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn single_cell_sweep_equals_composition() {
        let (tr, va) = (data(24, 1), data(8, 2));
        let spec = SweepSpec {
            lambda_d: vec![0.1],
            lambda_g: vec![0.1],
            seeds: vec![5],
            train: TrainConfig { epochs: 2, batch_size: 8, ..Default::default() },
            ..Default::default()
        };
        let result = sweep(&tr, &va, &spec, |_| {}).unwrap();
        assert!(result.failures.is_empty());
        let run = run_cell(&tr, &va, LossWeights::tied(0.1).unwrap(), 5, 1, &spec.train, &spec.audit).unwrap();
        assert_eq!(result.rows, vec![SweepRow::from_run(&run)]);
    }

    #[test]
    fn failing_cells_are_recorded() {
        let (tr, mut va) = (data(12, 1), data(4, 2));
        va[0].d = 3;
        va[0].x.truncate(6);
        let spec = SweepSpec {
            lambda_d: vec![0.1],
            lambda_g: vec![0.1],
            train: TrainConfig { epochs: 1, ..Default::default() },
            ..Default::default()
        };
        let result = sweep(&tr, &va, &spec, |_| {}).unwrap();
        assert_eq!((result.rows.len(), result.failures.len()), (0, 1));
    }

    #[test]
    fn archive_round_trip() {
        let recs = data(3, 4);
        let params = ModelParams::init(4, 1, 2, &mut RngState::new(0, STREAM_INIT)).unwrap();
        let qs = posteriors_for(&recs, &params, &PriorParams::standard(4)).unwrap();
        let ids: Vec<String> = recs.iter().map(|r| r.id.clone()).collect();
        let dir = tempfile::tempdir().unwrap();
        write_posterior_archive(dir.path(), &ids, &qs).unwrap();
        let back = read_posterior_archive(dir.path()).unwrap();
        assert_eq!(back.iter().map(|(i, _)| i.clone()).collect::<Vec<_>>(), ids);
        assert_eq!(back.into_iter().map(|(_, q)| q).collect::<Vec<_>>(), qs);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[1.0, f64::INFINITY]), Some(f64::INFINITY));
        assert_eq!(median(&[]), None);
    }
}
