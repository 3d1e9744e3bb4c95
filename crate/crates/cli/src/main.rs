//! `rlmildat`: dataset synthesis and preparation, training, evaluation,
//! cross-framework comparison and random hyperparameter sweeps.
//!
//! Exit codes: 0 ok, 2 I/O, 3 configuration or data, 4 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rlmildat::compare::{self, read_results};
use rlmildat::config::{Framework, TrainConfig};
use rlmildat::data::{
    load_dataset, prepare_dataset, synth_dataset, write_dataset, AgeScheme, DatasetSplit, InformativeMode, LabelKind,
    PrepareOptions, SplitName, SplitRatios, SynthSpec,
};
use rlmildat::manifest::{config_map, git_describe, now_unix, sha256_file, sha256_hex, RunManifest};
use rlmildat::mil::PoolKind;
use rlmildat::model::load_checkpoint;
use rlmildat::run::{result_records, train_run, DataSource, RESULTS_FILE};
use rlmildat::sweep::{render_report, run_sweep, sweep_threads, SearchSpace, BEST_CONFIG_FILE, TRIAL_LOG_FILE};
use rlmildat::trainer::evaluate_all;
use rlmildat::{Error, Result};

#[derive(Parser)]
#[command(name = "rlmildat", version, about = "Multiple-instance speaker-attribute prediction with RL instance selection and language-adversarial training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multilingual bag dataset.
    Synth(SynthArgs),
    /// Turn a CSV / JSON-lines corpus into a split bag dataset.
    Prepare(PrepareArgs),
    /// Train one framework and write checkpoint, history, results and manifest.
    Train(TrainArgs),
    /// Score a checkpoint on every split of a dataset.
    Evaluate(EvaluateArgs),
    /// Compare frameworks across seeds from run-results files.
    Compare(CompareArgs),
    /// Random hyperparameter search.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 2)]
    languages: usize,
    #[arg(long, default_value_t = 200)]
    speakers: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 8)]
    bag_min: usize,
    #[arg(long, default_value_t = 16)]
    bag_max: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// Norm of the class signal added to informative instances.
    #[arg(long, default_value_t = 2.0)]
    signal: f64,
    /// Norm of each language offset.
    #[arg(long, default_value_t = 3.0)]
    lang_offset: f64,
    /// Probability that an instance carries the class signal.
    #[arg(long, default_value_t = 0.5)]
    informative_frac: f64,
    /// Plant exactly one informative instance per bag instead.
    #[arg(long)]
    exactly_one: bool,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 100)]
    whole_bag_size: usize,
    #[arg(long, default_value = "0.8,0.1,0.1")]
    ratios: String,
    #[arg(long, default_value_t = 10)]
    pool_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "twitter6")]
    scheme: String,
    #[arg(long, default_value_t = 100)]
    whole_bag_size: usize,
    #[arg(long, default_value = "0.8,0.1,0.1")]
    ratios: String,
    #[arg(long, default_value_t = 10)]
    pool_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// One JSON array per input row.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Hashed text features of this width when no embeddings are available.
    #[arg(long)]
    hash_dim: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable), e.g. `--set lr_task=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    framework: Option<String>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    pooling: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    grl_lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    /// Defaults, then the dataset's bag cap, the config file, `--set`
    /// overrides and finally the dedicated flags.
    fn build(&self, split: &DatasetSplit) -> Result<TrainConfig> {
        let mut cfg = TrainConfig {
            whole_bag_size: split.meta.whole_bag_size,
            ..TrainConfig::default()
        };
        if let Some(path) = &self.config {
            cfg.apply_text(&std::fs::read_to_string(path)?)?;
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(v) = &self.framework {
            cfg.framework = v.parse::<Framework>()?;
        }
        if let Some(v) = &self.label {
            cfg.label = v.parse::<LabelKind>()?;
        }
        if let Some(v) = &self.pooling {
            cfg.pooling = v.parse::<PoolKind>()?;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
            cfg.early_stopping_patience = cfg.early_stopping_patience.min(v);
        }
        if let Some(v) = self.grl_lambda {
            cfg.grl_lambda = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Embedding-model identifier for the results file; defaults to the
    /// dataset file stem.
    #[arg(long)]
    encoder_id: Option<String>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    encoder_id: Option<String>,
    /// Write results and a manifest here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Run-results CSV files; rows are concatenated.
    #[arg(long, required = true, num_args = 1..)]
    results: Vec<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    search_space: PathBuf,
    #[arg(long, default_value_t = rlmildat::sweep::DEFAULT_TRIALS)]
    trials: usize,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    encoder_id: Option<String>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn data_source(path: &Path, encoder_id: &Option<String>) -> Result<DataSource> {
    Ok(DataSource {
        path: path.to_path_buf(),
        sha256: sha256_file(path)?,
        encoder_id: encoder_id.clone().unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "unknown".into())
        }),
    })
}

fn print_split_summary(split: &DatasetSplit) {
    for name in SplitName::ALL {
        let part = split.part(name);
        println!(
            "{name}: {} bags, age classes {:?}, gender classes {:?}, language instances {:?}",
            part.len(),
            split.class_histogram(name, LabelKind::Age),
            split.class_histogram(name, LabelKind::Gender),
            split.language_histogram(name)
        );
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        n_languages: a.languages,
        n_speakers: a.speakers,
        dim: a.dim,
        bag_min: a.bag_min,
        bag_max: a.bag_max,
        n_classes: a.classes,
        signal: a.signal,
        lang_offset: a.lang_offset,
        informative: if a.exactly_one {
            InformativeMode::ExactlyOne
        } else {
            InformativeMode::Bernoulli(a.informative_frac)
        },
        noise: a.noise,
        whole_bag_size: a.whole_bag_size,
        ratios: a.ratios.parse::<SplitRatios>()?,
        pool_size: a.pool_size,
    };
    let out = synth_dataset(&spec, a.seed)?;
    write_dataset(&a.out, &out.split)?;
    print_split_summary(&out.split);
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_prepare(a: PrepareArgs) -> Result<()> {
    let opts = PrepareOptions {
        scheme: a.scheme.parse::<AgeScheme>()?,
        whole_bag_size: a.whole_bag_size,
        ratios: a.ratios.parse::<SplitRatios>()?,
        pool_size: a.pool_size,
        seed: a.seed,
        embeddings: a.embeddings.as_deref(),
        hash_dim: a.hash_dim,
    };
    let (split, report) = prepare_dataset(&a.input, &opts)?;
    write_dataset(&a.out, &split)?;
    println!("{report}");
    print_split_summary(&split);
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let split = load_dataset(&a.dataset)?;
    let cfg = a.config.build(&split)?;
    let source = data_source(&a.dataset, &a.encoder_id)?;
    let outcome = train_run(&split, &cfg, &source, &a.out_dir)?;
    let s = &outcome.summary;
    println!(
        "{} epochs (best {} with validation macro-F1 {:.4}{})",
        s.epochs_run,
        s.best_epoch,
        s.best_val_macro_f1,
        if s.stopped_early { ", stopped early" } else { "" }
    );
    println!(
        "macro-F1 train/val/test: {:.4} {:.4} {:.4}",
        outcome.metric(SplitName::Train).macro_f1,
        outcome.metric(SplitName::Validation).macro_f1,
        outcome.metric(SplitName::Test).macro_f1
    );
    println!("artifacts in {}", a.out_dir.display());
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let run_dir = a.checkpoint.parent().unwrap_or(Path::new("."));
    RunManifest::load(run_dir)?.verify_dataset(&a.dataset)?;
    let started = now_unix();
    let ck = load_checkpoint(&a.checkpoint)?;
    let split = load_dataset(&a.dataset)?;
    let metrics = evaluate_all(&ck.model, &ck.config, &split)?;
    for (name, m) in &metrics {
        println!("{name}: macro-F1 {:.4}, accuracy {:.4} ({} bags)", m.macro_f1, m.accuracy, m.bags);
    }
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir)?;
        let source = data_source(&a.dataset, &a.encoder_id)?;
        compare::write_results(&dir.join(RESULTS_FILE), &result_records(&ck.config, &source.encoder_id, &metrics))?;
        RunManifest {
            command: "evaluate".into(),
            config: config_map(&ck.config.to_text()),
            dataset: a.dataset.display().to_string(),
            dataset_sha256: source.sha256,
            seed: ck.config.seed,
            git_describe: git_describe(),
            started_unix: started,
            finished_unix: now_unix(),
            outputs: vec![RESULTS_FILE.into()],
        }
        .write(dir)?;
    }
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let started = now_unix();
    let mut records = Vec::new();
    let mut digest_input = Vec::new();
    for path in &a.results {
        records.extend(read_results(path)?);
        digest_input.extend(std::fs::read(path)?);
    }
    let cmp = compare::build_comparison(&records, &a.split)?;
    for w in &cmp.warnings {
        eprintln!("warning: {w}");
    }
    let table = compare::render_table(&cmp.rows);
    print!("{table}");

    std::fs::create_dir_all(&a.out)?;
    let files = [
        ("comparison.csv", compare::comparison_csv(&cmp.rows)?),
        ("comparison.txt", table),
        ("boxplot.csv", compare::boxplot_csv(&cmp.series)),
        ("barchart.csv", compare::barchart_csv(&cmp.series)),
    ];
    for (name, body) in &files {
        std::fs::write(a.out.join(name), body)?;
    }
    RunManifest {
        command: "compare".into(),
        config: [("split".to_string(), a.split.clone())].into_iter().collect(),
        dataset: a.results.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(","),
        dataset_sha256: sha256_hex(&digest_input),
        seed: 0,
        git_describe: git_describe(),
        started_unix: started,
        finished_unix: now_unix(),
        outputs: files.iter().map(|(n, _)| n.to_string()).collect(),
    }
    .write(&a.out)?;
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let started = now_unix();
    let space = SearchSpace::load(&a.search_space)?;
    let split = load_dataset(&a.dataset)?;
    let base = a.config.build(&split)?;
    let source = data_source(&a.dataset, &a.encoder_id)?;
    let report = run_sweep(&split, &base, &space, a.trials, &source, &a.out_dir, sweep_threads())?;
    print!("{}", render_report(&report));
    let mut config = config_map(&base.to_text());
    config.insert("sweep.trials".into(), a.trials.to_string());
    config.insert("sweep.search_space".into(), a.search_space.display().to_string());
    RunManifest {
        command: "sweep".into(),
        config,
        dataset: a.dataset.display().to_string(),
        dataset_sha256: source.sha256,
        seed: base.seed,
        git_describe: git_describe(),
        started_unix: started,
        finished_unix: now_unix(),
        outputs: vec![TRIAL_LOG_FILE.into(), BEST_CONFIG_FILE.into()],
    }
    .write(&a.out_dir)?;
    Ok(())
}

fn main() -> ExitCode {
    // usage errors belong to the config class (3), not clap's default 2
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Prepare(a) => cmd_prepare(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
