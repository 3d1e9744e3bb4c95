//! One complete training run written to an artifact directory.

use std::path::{Path, PathBuf};

use crate::compare::{write_results, ResultRecord};
use crate::config::TrainConfig;
use crate::data::{DatasetSplit, SplitName};
use crate::error::{Error, Result};
use crate::manifest::{config_map, git_describe, now_unix, RunManifest};
use crate::trainer::{evaluate_all, FitSummary, SplitMetrics, Trainer};

pub const CHECKPOINT_FILE: &str = "checkpoint.rmck";
pub const HISTORY_FILE: &str = "history.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const CONFIG_FILE: &str = "config.txt";

/// Where the data came from, for results rows and the manifest.
#[derive(Debug, Clone)]
pub struct DataSource {
    pub path: PathBuf,
    pub sha256: String,
    /// Identifier of the embedding model, used as the `encoder` column.
    pub encoder_id: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: FitSummary,
    pub metrics: Vec<(SplitName, SplitMetrics)>,
    pub records: Vec<ResultRecord>,
    pub out_dir: PathBuf,
}

impl RunOutcome {
    pub fn metric(&self, name: SplitName) -> SplitMetrics {
        self.metrics.iter().find(|(n, _)| *n == name).expect("all splits evaluated").1
    }
}

pub fn result_records(cfg: &TrainConfig, encoder_id: &str, metrics: &[(SplitName, SplitMetrics)]) -> Vec<ResultRecord> {
    metrics
        .iter()
        .map(|(name, m)| ResultRecord {
            encoder: encoder_id.to_string(),
            pooling: cfg.pooling.to_string(),
            label: cfg.label.to_string(),
            framework: cfg.framework.to_string(),
            seed: cfg.seed,
            split: name.to_string(),
            macro_f1: m.macro_f1,
            accuracy: m.accuracy,
        })
        .collect()
}

/// Fits `cfg` on `split` and writes checkpoint, history, results, config and
/// manifest into `out_dir`. A numeric failure leaves a `loss_trace.csv`
/// behind and names it in the returned error.
pub fn train_run(split: &DatasetSplit, cfg: &TrainConfig, source: &DataSource, out_dir: &Path) -> Result<RunOutcome> {
    std::fs::create_dir_all(out_dir)?;
    let started = now_unix();
    let mut trainer = Trainer::new(cfg.clone(), &split.meta)?;
    let summary = match trainer.fit(split, Some(&out_dir.join(CHECKPOINT_FILE))) {
        Ok(s) => s,
        Err(Error::Numeric(msg)) => {
            let trace = trainer.dump_trace(out_dir)?;
            return Err(Error::Numeric(format!("{msg}; loss trace written to {}", trace.display())));
        }
        Err(e) => return Err(e),
    };
    let metrics = evaluate_all(&trainer.model, cfg, split)?;
    let records = result_records(cfg, &source.encoder_id, &metrics);

    std::fs::write(out_dir.join(HISTORY_FILE), trainer.history_csv())?;
    write_results(&out_dir.join(RESULTS_FILE), &records)?;
    let config_text = cfg.to_text();
    std::fs::write(out_dir.join(CONFIG_FILE), &config_text)?;
    RunManifest {
        command: "train".into(),
        config: config_map(&config_text),
        dataset: source.path.display().to_string(),
        dataset_sha256: source.sha256.clone(),
        seed: cfg.seed,
        git_describe: git_describe(),
        started_unix: started,
        finished_unix: now_unix(),
        outputs: [CHECKPOINT_FILE, HISTORY_FILE, RESULTS_FILE, CONFIG_FILE]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    }
    .write(out_dir)?;
    Ok(RunOutcome {
        summary,
        metrics,
        records,
        out_dir: out_dir.to_path_buf(),
    })
}
