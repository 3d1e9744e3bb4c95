//! Random hyperparameter search. Every trial is an independent training run
//! in its own `trial_NNN` directory; results are merged from those.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use crate::config::TrainConfig;
use crate::data::{DatasetSplit, SplitName};
use crate::error::{Error, Result};
use crate::nn::{stream_rng, Stream};
use crate::run::{train_run, DataSource};

pub const DEFAULT_TRIALS: usize = 50;
pub const THREADS_ENV: &str = "RLMILDAT_THREADS";
pub const TRIAL_LOG_FILE: &str = "trials.csv";
pub const BEST_CONFIG_FILE: &str = "best_config.txt";

#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    /// Log-uniform on `[lo, hi]`, `lo > 0`.
    Log { lo: f64, hi: f64 },
    Linear { lo: f64, hi: f64 },
    /// Uniform integer on `[lo, hi]` inclusive.
    Int { lo: i64, hi: i64 },
    Choice(Vec<String>),
}

impl Distribution {
    fn sample(&self, rng: &mut impl Rng) -> String {
        match self {
            Distribution::Log { lo, hi } => (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp().to_string(),
            Distribution::Linear { lo, hi } => (lo + rng.random::<f64>() * (hi - lo)).to_string(),
            Distribution::Int { lo, hi } => rng.random_range(*lo..=*hi).to_string(),
            Distribution::Choice(opts) => opts[rng.random_range(0..opts.len())].clone(),
        }
    }

    /// Every value the distribution can produce at its edges, for validation.
    fn edge_values(&self) -> Vec<String> {
        match self {
            Distribution::Log { lo, hi } | Distribution::Linear { lo, hi } => vec![lo.to_string(), hi.to_string()],
            Distribution::Int { lo, hi } => vec![lo.to_string(), hi.to_string()],
            Distribution::Choice(opts) => opts.clone(),
        }
    }
}

/// Ordered `key -> distribution` pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SearchSpace {
    pub entries: Vec<(String, Distribution)>,
}

fn parse_f64(line: usize, s: &str) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Config(format!("search space line {line}: `{s}` is not a finite number")))
}

impl SearchSpace {
    /// One entry per line: `key = log LO HI`, `key = linear LO HI`,
    /// `key = int LO HI` or `key = choice A B ...`. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(String, Distribution)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, rhs) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("search space line {line_no}: expected `key = kind ...`")))?;
            let key = key.trim().to_string();
            let parts: Vec<&str> = rhs.split_whitespace().collect();
            let bad = |msg: &str| Error::Config(format!("search space line {line_no} ({key}): {msg}"));
            let dist = match parts.as_slice() {
                ["log", lo, hi] => {
                    let (lo, hi) = (parse_f64(line_no, lo)?, parse_f64(line_no, hi)?);
                    if !(lo > 0.0 && lo <= hi) {
                        return Err(bad("log range needs 0 < lo <= hi"));
                    }
                    Distribution::Log { lo, hi }
                }
                ["linear", lo, hi] => {
                    let (lo, hi) = (parse_f64(line_no, lo)?, parse_f64(line_no, hi)?);
                    if lo > hi {
                        return Err(bad("linear range needs lo <= hi"));
                    }
                    Distribution::Linear { lo, hi }
                }
                ["int", lo, hi] => {
                    let lo: i64 = lo.parse().map_err(|_| bad("int bounds must be integers"))?;
                    let hi: i64 = hi.parse().map_err(|_| bad("int bounds must be integers"))?;
                    if lo > hi {
                        return Err(bad("int range needs lo <= hi"));
                    }
                    Distribution::Int { lo, hi }
                }
                ["choice", opts @ ..] if !opts.is_empty() => {
                    Distribution::Choice(opts.iter().map(|s| s.to_string()).collect())
                }
                _ => return Err(bad("expected log|linear|int LO HI or choice A B ...")),
            };
            if entries.iter().any(|(k, _)| *k == key) {
                return Err(bad("key listed twice"));
            }
            let mut probe = TrainConfig::default();
            for v in dist.edge_values() {
                probe.set(&key, &v)?;
            }
            entries.push((key, dist));
        }
        if entries.is_empty() {
            return Err(Error::Config("search space is empty".into()));
        }
        Ok(SearchSpace { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The first `trials` assignments drawn from the sweep stream of `seed`.
    pub fn draw(&self, trials: usize, seed: u64) -> Vec<Vec<(String, String)>> {
        let mut rng = stream_rng(seed, Stream::Sweep);
        (0..trials)
            .map(|_| self.entries.iter().map(|(k, d)| (k.clone(), d.sample(&mut rng))).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrialStatus {
    Ok,
    /// The sampled configuration failed validation.
    Invalid(String),
    /// Training diverged.
    Numeric(String),
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub index: usize,
    pub assignment: Vec<(String, String)>,
    pub status: TrialStatus,
    pub config: Option<TrainConfig>,
    pub best_val_macro_f1: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_run: Option<usize>,
    pub test_macro_f1: Option<f64>,
    pub dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub trials: Vec<TrialResult>,
    /// Index into `trials` of the highest validation score; ties go to the
    /// earlier trial.
    pub best: usize,
}

impl SweepReport {
    pub fn best_trial(&self) -> &TrialResult {
        &self.trials[self.best]
    }
}

/// Worker count: `RLMILDAT_THREADS` if set to a positive integer, else the
/// number of available cores.
pub fn sweep_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn trial_dir(out_dir: &Path, index: usize) -> PathBuf {
    out_dir.join(format!("trial_{index:03}"))
}

fn run_trial(
    split: &DatasetSplit,
    base: &TrainConfig,
    source: &DataSource,
    out_dir: &Path,
    index: usize,
    assignment: Vec<(String, String)>,
) -> Result<TrialResult> {
    let dir = trial_dir(out_dir, index);
    let mut result = TrialResult {
        index,
        assignment,
        status: TrialStatus::Ok,
        config: None,
        best_val_macro_f1: None,
        best_epoch: None,
        epochs_run: None,
        test_macro_f1: None,
        dir: dir.clone(),
    };
    let mut cfg = base.clone();
    for (k, v) in &result.assignment {
        cfg.set(k, v)?;
    }
    if let Err(e) = cfg.validate() {
        result.status = TrialStatus::Invalid(e.to_string());
        return Ok(result);
    }
    result.config = Some(cfg.clone());
    match train_run(split, &cfg, source, &dir) {
        Ok(outcome) => {
            result.best_val_macro_f1 = Some(outcome.summary.best_val_macro_f1);
            result.best_epoch = Some(outcome.summary.best_epoch);
            result.epochs_run = Some(outcome.summary.epochs_run);
            result.test_macro_f1 = Some(outcome.metric(SplitName::Test).macro_f1);
        }
        Err(Error::Numeric(msg)) => result.status = TrialStatus::Numeric(msg),
        Err(e) => return Err(e),
    }
    Ok(result)
}

/// Runs `trials` random configurations on up to `threads` workers and writes
/// the trial log and best configuration into `out_dir`. Draws come from the
/// sweep stream of `base.seed`, and every trial trains with that seed too.
pub fn run_sweep(
    split: &DatasetSplit,
    base: &TrainConfig,
    space: &SearchSpace,
    trials: usize,
    source: &DataSource,
    out_dir: &Path,
    threads: usize,
) -> Result<SweepReport> {
    if trials == 0 {
        return Err(Error::Config("number of trials must be >= 1".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let assignments = space.draw(trials, base.seed);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} sweep workers: {e}")))?;
    let results: Vec<TrialResult> = pool.install(|| {
        assignments
            .into_par_iter()
            .enumerate()
            .map(|(i, a)| run_trial(split, base, source, out_dir, i, a))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut best: Option<usize> = None;
    for (i, r) in results.iter().enumerate() {
        if let Some(v) = r.best_val_macro_f1 {
            if best.is_none_or(|b| v > results[b].best_val_macro_f1.unwrap()) {
                best = Some(i);
            }
        }
    }
    let report = SweepReport {
        best: best.ok_or_else(|| Error::Numeric(format!("none of the {trials} sweep trials completed")))?,
        trials: results,
    };
    std::fs::write(out_dir.join(TRIAL_LOG_FILE), trial_log_csv(space, &report.trials)?)?;
    let best_cfg = report.best_trial().config.as_ref().expect("completed trial has a config");
    std::fs::write(out_dir.join(BEST_CONFIG_FILE), best_cfg.to_text())?;
    Ok(report)
}

pub fn trial_log_csv(space: &SearchSpace, trials: &[TrialResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["trial".to_string(), "status".to_string()];
    header.extend(space.entries.iter().map(|(k, _)| k.clone()));
    header.extend(
        ["best_val_macro_f1", "best_epoch", "epochs_run", "test_macro_f1", "dir"]
            .iter()
            .map(|s| s.to_string()),
    );
    w.write_record(&header)?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for t in trials {
        let mut rec = vec![
            t.index.to_string(),
            match &t.status {
                TrialStatus::Ok => "ok".to_string(),
                TrialStatus::Invalid(m) => format!("invalid: {m}"),
                TrialStatus::Numeric(m) => format!("numeric: {m}"),
            },
        ];
        rec.extend(t.assignment.iter().map(|(_, v)| v.clone()));
        rec.push(opt(t.best_val_macro_f1.map(|v| v.to_string())));
        rec.push(opt(t.best_epoch.map(|v| v.to_string())));
        rec.push(opt(t.epochs_run.map(|v| v.to_string())));
        rec.push(opt(t.test_macro_f1.map(|v| v.to_string())));
        rec.push(t.dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("csv is utf-8"))
}

/// Plain-text summary of the winning trial.
pub fn render_report(report: &SweepReport) -> String {
    let best = report.best_trial();
    let mut s = String::new();
    let completed = report.trials.iter().filter(|t| t.status == TrialStatus::Ok).count();
    let _ = writeln!(s, "trials: {} ({completed} completed)", report.trials.len());
    let _ = writeln!(
        s,
        "best trial {} ({}): val macro-F1 {:.4}, test macro-F1 {:.4}",
        best.index,
        best.dir.display(),
        best.best_val_macro_f1.unwrap_or(f64::NAN),
        best.test_macro_f1.unwrap_or(f64::NAN)
    );
    for (k, v) in &best.assignment {
        let _ = writeln!(s, "  {k} = {v}");
    }
    s
}
