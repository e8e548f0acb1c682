//! The `nvdp` command line: synthetic data, training, sanitization,
//! auditing and sweeps.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage or invalid argument,
//! 3 numerical failure, 4 malformed input file.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::accountant::{PrivacyReport, CSV_HEADER};
use crate::audit::{audit, AuditConfig, Mechanism, MechanismKind, DEFAULT_PAD_FLOOR};
use crate::embedding_io::{
    generate_synthetic, load_embeddings, write_embeddings, write_sanitized, EmbeddingRecord, SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::network::{read_params, train, write_params, write_training_log, LossWeights, ModelParams, TrainConfig, STREAM_INIT};
use crate::pipeline::{
    examples_from_records, plot_csv, posteriors_for, read_posterior_archive, sanitize_records, sweep, sweep_csv,
    write_posterior_archive, SweepSpec,
};
use crate::posterior::PriorParams;
use crate::renyi::RenyiOrder;
use crate::sampling::RngState;

pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_FORMAT: i32 = 4;

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Argument(_) => EXIT_USAGE,
        Error::Domain { .. } | Error::Numerical(_) => EXIT_NUMERICAL,
        Error::Format { .. } => EXIT_FORMAT,
        Error::Io(_) => EXIT_IO,
    }
}

#[derive(Parser, Debug)]
#[command(name = "nvdp", version, about = "Dirichlet-Process embedding sanitizer and privacy auditor")]
pub struct Cli {
    /// File of `key = value` lines supplying defaults for missing flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic labelled embedding file.
    Gen(GenArgs),
    /// Train one regularization setting.
    Train(TrainArgs),
    /// Release one sample per record.
    Sanitize(SanitizeArgs),
    /// Pairwise divergence audit and privacy report.
    Audit(AuditArgs),
    /// Train, sanitize and audit over a grid of regularization weights.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Distance between class means.
    #[arg(long, default_value_t = 6.0)]
    pub sep: f64,
    #[arg(long, default_value_t = 2)]
    pub min_len: usize,
    #[arg(long, default_value_t = 12)]
    pub max_len: usize,
    #[arg(long, env = "NVDP_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct TrainingFlags {
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long = "lr", default_value_t = 1e-2)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Fraction of steps over which the step size ramps up.
    #[arg(long, default_value_t = 0.0)]
    pub warmup: f64,
    #[arg(long, default_value_t = 5.0)]
    pub clip_norm: f64,
    /// Attention heads; must divide the embedding dimension.
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
    /// Validation file; without it the last `--val-fraction` of the data is held out.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
}

impl TrainingFlags {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            warmup_fraction: self.warmup,
            clip_norm: self.clip_norm,
        }
    }

    fn split(&self, data: &Path) -> Result<(Vec<EmbeddingRecord>, Vec<EmbeddingRecord>)> {
        let (_, mut records) = load_embeddings(data)?;
        if let Some(val) = &self.val {
            let (_, v) = load_embeddings(val)?;
            return Ok((records, v));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::arg(format!("validation fraction {} outside (0, 1)", self.val_fraction)));
        }
        let n_val = ((records.len() as f64) * self.val_fraction).round() as usize;
        if n_val == 0 || n_val >= records.len() {
            return Err(Error::arg(format!("cannot hold out {n_val} of {} records", records.len())));
        }
        let val = records.split_off(records.len() - n_val);
        Ok((records, val))
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training embeddings (.emb).
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Training-log CSV; defaults to the checkpoint path with `.log.csv` appended.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-2)]
    pub lambda_d: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub lambda_g: f64,
    #[command(flatten)]
    pub training: TrainingFlags,
    #[arg(long, env = "NVDP_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SanitizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Sanitized output (.nvs).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the posteriors, one `.dpq` per record, into this directory.
    #[arg(long, value_name = "DIR")]
    pub emit_posteriors: Option<PathBuf>,
    #[arg(long, env = "NVDP_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct AuditFlags {
    #[arg(long, default_value_t = 1.1)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
    /// Pseudo-count of padding components.
    #[arg(long, default_value_t = DEFAULT_PAD_FLOOR)]
    pub pad_floor: f64,
    /// Cap on unordered pairs, sampled uniformly.
    #[arg(long)]
    pub max_pairs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    /// Posterior archive written by `sanitize --emit-posteriors`.
    #[arg(long, value_name = "DIR", conflicts_with_all = ["model", "data"])]
    pub archive: Option<PathBuf>,
    /// Checkpoint used with `--data` to derive posteriors.
    #[arg(long, requires = "data")]
    pub model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "nvdp")]
    pub mechanism: String,
    /// Noise scale for the VIB mechanisms: one value, or one per dimension for vib-learned.
    #[arg(long, value_delimiter = ',', default_value = "0.55")]
    pub sigma: Vec<f64>,
    #[command(flatten)]
    pub flags: AuditFlags,
    /// Minimize the privacy loss over the default order grid.
    #[arg(long)]
    pub optimize_lambda: bool,
    /// Report JSON path; printed to stdout when absent.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Also write the report as a one-row CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Dataset name recorded in the report.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long, env = "NVDP_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.1,1")]
    pub lambda_d: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.1,1")]
    pub lambda_g: Vec<f64>,
    /// Set λ_G = λ_D and sweep the λ_D grid only.
    #[arg(long)]
    pub tied: bool,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub training: TrainingFlags,
    #[command(flatten)]
    pub audit: AuditFlags,
    /// Trade-off table CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// `(epsilon_mu, accuracy)` CSV.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

/// Parses `args` (program name first), merges the config file and runs the
/// command. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match merge_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Appends `--key value` for every config entry whose flag is absent from
/// `args`; `true`/`false` values toggle switches.
pub fn merge_config(mut args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    for (k, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = args.get(k + 1).map(PathBuf::from);
            if path.is_none() {
                return Err(Error::arg("--config needs a file"));
            }
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = fs::read_to_string(&path)?;
    let present: Vec<String> = args
        .iter()
        .filter_map(|a| a.to_str())
        .filter(|a| a.starts_with("--"))
        .map(|a| a.split('=').next().unwrap().to_string())
        .collect();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::arg(format!("{}:{}: expected key = value", path.display(), lineno + 1)))?;
        let flag = format!("--{}", key.trim().replace('_', "-"));
        if present.contains(&flag) {
            continue;
        }
        match value.trim() {
            "true" => args.push(flag.into()),
            "false" => {}
            v => {
                args.push(flag.into());
                args.push(v.into());
            }
        }
    }
    Ok(args)
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Sanitize(a) => cmd_sanitize(&a),
        Command::Audit(a) => cmd_audit(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    }
}

fn cmd_gen(a: &GenArgs) -> Result<i32> {
    let records = generate_synthetic(&SyntheticConfig {
        n_examples: a.n,
        d: a.dim,
        n_range: (a.min_len, a.max_len),
        n_classes: a.classes,
        class_separation: a.sep,
        seed: a.seed,
    })?;
    write_embeddings(&a.out, &records)?;
    let tokens: usize = records.iter().map(EmbeddingRecord::n).sum();
    println!(
        "{}: {} records, d = {}, {} classes, {} tokens",
        a.out.display(),
        records.len(),
        a.dim,
        a.classes,
        tokens
    );
    Ok(0)
}

fn cmd_train(a: &TrainArgs) -> Result<i32> {
    let weights = LossWeights::new(a.lambda_d, a.lambda_g)?;
    let (train_set, val_set) = a.training.split(&a.data)?;
    let (train_examples, c) = examples_from_records(&train_set)?;
    let (val_examples, _) = examples_from_records(&val_set)?;
    let d = train_set.first().map(|r| r.d).ok_or_else(|| Error::arg("empty training file"))?;
    if let Some(r) = val_set.iter().find(|r| r.d != d) {
        return Err(Error::format(0, format!("validation record {} has d = {}, training data has {d}", r.id, r.d)));
    }
    let prior = PriorParams::standard(d);
    let initial = ModelParams::init(d, a.training.heads, c, &mut RngState::new(a.seed, STREAM_INIT))?;
    let outcome = train(&train_examples, &val_examples, initial, &prior, &a.training.config(a.seed), weights)?;
    write_params(&a.out, &outcome.params)?;
    let log_path = a.log.clone().unwrap_or_else(|| suffixed(&a.out, ".log.csv"));
    write_training_log(&log_path, &outcome.log)?;
    if let Some(last) = outcome.log.last() {
        println!(
            "trained {} epochs (best {}): val L = {:.6}, val acc = {:.4}",
            outcome.log.len(),
            outcome.best_epoch,
            last.val.total,
            last.val_acc
        );
    } else {
        println!("0 epochs: wrote initial parameters");
    }
    match outcome.aborted {
        Some(msg) => {
            eprintln!("training aborted ({msg}); checkpoint holds epoch {}", outcome.best_epoch);
            Ok(EXIT_NUMERICAL)
        }
        None => Ok(0),
    }
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_sanitize(a: &SanitizeArgs) -> Result<i32> {
    let params = read_params(&a.model)?;
    let (d, records) = load_embeddings(&a.data)?;
    if !records.is_empty() && d != params.d {
        return Err(Error::format(0, format!("embedding file has d = {d}, checkpoint has d = {}", params.d)));
    }
    let prior = PriorParams::standard(params.d);
    let sanitized = sanitize_records(&records, &params, &prior, a.seed)?;
    write_sanitized(&a.out, params.d, &sanitized)?;
    if let Some(dir) = &a.emit_posteriors {
        let posteriors = posteriors_for(&records, &params, &prior)?;
        let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
        write_posterior_archive(dir, &ids, &posteriors)?;
    }
    println!("{}: {} sanitized records", a.out.display(), sanitized.len());
    Ok(0)
}

fn mechanism(kind: &str, sigma: &[f64], d: usize) -> Result<Mechanism> {
    Ok(match kind.parse::<MechanismKind>()? {
        MechanismKind::Nvdp => Mechanism::Nvdp,
        MechanismKind::Vtdp => Mechanism::Vtdp,
        MechanismKind::VibFixed => match sigma {
            [s] => Mechanism::VibFixed { sigma: *s },
            _ => return Err(Error::arg("vib-fixed takes a single --sigma")),
        },
        MechanismKind::VibLearned => match sigma {
            [s] => Mechanism::VibLearned { sigma: vec![*s; d] },
            v if v.len() == d => Mechanism::VibLearned { sigma: v.to_vec() },
            v => return Err(Error::arg(format!("vib-learned takes 1 or {d} sigma values, got {}", v.len()))),
        },
    })
}

fn audit_config(f: &AuditFlags, mechanism: Mechanism, optimize: bool, seed: u64) -> Result<AuditConfig> {
    Ok(AuditConfig {
        mechanism,
        lambda: RenyiOrder::new(f.lambda)?,
        delta_mu: f.delta,
        pad_floor: f.pad_floor,
        optimize_lambda: optimize,
        max_pairs: f.max_pairs,
        seed,
    })
}

fn cmd_audit(a: &AuditArgs) -> Result<i32> {
    let (posteriors, default_name) = match (&a.archive, &a.model, &a.data) {
        (Some(dir), _, _) => {
            let entries = read_posterior_archive(dir)?;
            (entries.into_iter().map(|(_, q)| q).collect::<Vec<_>>(), stem(dir))
        }
        (None, Some(model), Some(data)) => {
            let params = read_params(model)?;
            let (_, records) = load_embeddings(data)?;
            (posteriors_for(&records, &params, &PriorParams::standard(params.d))?, stem(data))
        }
        _ => return Err(Error::arg("audit needs --archive, or --model with --data")),
    };
    let d = posteriors.first().map(|q| q.d()).unwrap_or(0);
    let config = audit_config(&a.flags, mechanism(&a.mechanism, &a.sigma, d)?, a.optimize_lambda, a.seed)?;
    let report = audit(&posteriors, &config, a.dataset.as_deref().unwrap_or(&default_name))?;
    emit_report(&report, a.json.as_deref(), a.csv.as_deref())?;
    Ok(0)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn emit_report(report: &PrivacyReport, json: Option<&Path>, csv: Option<&Path>) -> Result<()> {
    let text = report.to_json()?;
    match json {
        Some(p) => fs::write(p, format!("{text}\n"))?,
        None => println!("{text}"),
    }
    if let Some(p) = csv {
        fs::write(p, format!("{CSV_HEADER}\n{}\n", report.csv_row()))?;
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<i32> {
    let (train_set, val_set) = a.training.split(&a.data)?;
    let lambda_g = if a.tied { a.lambda_d.clone() } else { a.lambda_g.clone() };
    let spec = SweepSpec {
        lambda_d: a.lambda_d.clone(),
        lambda_g,
        tied: a.tied,
        seeds: a.seeds.clone(),
        heads: a.training.heads,
        train: a.training.config(0),
        audit: audit_config(&a.audit, Mechanism::Nvdp, false, 0)?,
    };
    spec.validate()?;
    let total = spec.cells().len();
    let mut done = 0;
    let result = sweep(&train_set, &val_set, &spec, |cell| {
        done += 1;
        match cell {
            Ok(r) => eprintln!(
                "[{done}/{total}] lambda_d={} lambda_g={} seed={}: acc={:.4} rd_max={} eps_mu={}",
                r.lambda_d, r.lambda_g, r.seed, r.accuracy, r.rd_max, r.epsilon_mu
            ),
            Err(f) => eprintln!(
                "[{done}/{total}] lambda_d={} lambda_g={} seed={}: failed: {}",
                f.lambda_d, f.lambda_g, f.seed, f.error
            ),
        }
    })?;
    fs::write(&a.out, sweep_csv(&result.rows))?;
    if let Some(p) = &a.plot {
        fs::write(p, plot_csv(&result.rows))?;
    }
    println!("{}: {} rows, {} failed cells", a.out.display(), result.rows.len(), result.failures.len());
    if result.rows.is_empty() {
        return Ok(EXIT_NUMERICAL);
    }
    Ok(0)
}
