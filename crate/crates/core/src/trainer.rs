//! Training loops for the three frameworks, early stopping and evaluation.
//!
//! Per bag, the policy frameworks run two backward passes into the same
//! gradient slots: first the task loss on the greedy subset, then
//! `L_total = L_p + L_reg + L_domain`. Both are scaled by `1 / batch_len` and
//! a single optimizer step is taken per batch. While the reversal weight is 0
//! the domain branch is skipped entirely.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{backward, ops, optimizer_step, LearningRates, Tensor, Value};
use crate::config::{Framework, TrainConfig};
use crate::dat::domain_loss;
use crate::data::{DatasetMeta, DatasetSplit, SpeakerBag, SplitName};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::mil::argmax;
use crate::model::{write_checkpoint, ModelBundle};
use crate::nn::{stream_rng, Stream};
use crate::policy::{policy_loss, regularizer, reward, select, sequence_log_prob, RewardBaseline, SelectMode};

pub const HISTORY_HEADER: &str = "epoch,l_task,l_p,l_reg,l_domain,l_total,val_macro_f1";

/// Loss components of one bag. `l_total` is `l_p + l_reg + l_domain`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BagLosses {
    pub l_task: f64,
    pub l_p: f64,
    pub l_reg: f64,
    pub l_domain: f64,
    pub l_total: f64,
}

impl BagLosses {
    fn check(&self, epoch: usize, speaker: &str) -> Result<()> {
        for (name, v) in [
            ("l_task", self.l_task),
            ("l_p", self.l_p),
            ("l_reg", self.l_reg),
            ("l_domain", self.l_domain),
            ("l_total", self.l_total),
        ] {
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "{name} = {v} at epoch {epoch}, speaker `{speaker}`"
                )));
            }
        }
        Ok(())
    }
}

/// Mean bag losses of one epoch plus the validation score after it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_task: f64,
    pub l_p: f64,
    pub l_reg: f64,
    pub l_domain: f64,
    pub l_total: f64,
    pub val_macro_f1: f64,
}

/// `-0.0` prints as "-0"; normalise so equivalent runs write equal files.
fn fmt_f64(v: f64) -> String {
    (v + 0.0).to_string()
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.epoch,
            fmt_f64(r.l_task),
            fmt_f64(r.l_p),
            fmt_f64(r.l_reg),
            fmt_f64(r.l_domain),
            fmt_f64(r.l_total),
            fmt_f64(r.val_macro_f1)
        );
    }
    s
}

/// Per-bag trace of the epoch in progress, for post-mortems after a
/// numeric failure.
pub fn trace_csv(trace: &[(usize, String, BagLosses)]) -> String {
    let mut s = String::from("epoch,speaker_id,l_task,l_p,l_reg,l_domain,l_total\n");
    for (epoch, speaker, l) in trace {
        let _ = writeln!(
            s,
            "{epoch},{speaker},{},{},{},{},{}",
            fmt_f64(l.l_task),
            fmt_f64(l.l_p),
            fmt_f64(l.l_reg),
            fmt_f64(l.l_domain),
            fmt_f64(l.l_total)
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainState {
    /// Number of completed epochs.
    pub epoch: usize,
    pub best_val: f64,
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    pub baseline: RewardBaseline,
    pub history: Vec<EpochRecord>,
    /// Every bag's losses so far, in processing order.
    pub trace: Vec<(usize, String, BagLosses)>,
    best_snapshot: Option<BTreeMap<String, Tensor>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitMetrics {
    pub macro_f1: f64,
    pub accuracy: f64,
    pub bags: usize,
}

#[derive(Debug, Clone)]
pub struct FitSummary {
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: ModelBundle,
    pub state: TrainState,
    rates: LearningRates,
    shuffle_rng: ChaCha8Rng,
    selection_rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: TrainConfig, meta: &DatasetMeta) -> Result<Self> {
        config.validate()?;
        if config.whole_bag_size != meta.whole_bag_size {
            return Err(Error::Config(format!(
                "whole_bag_size {} does not match the dataset's {}",
                config.whole_bag_size, meta.whole_bag_size
            )));
        }
        let model = ModelBundle::new(&config, meta.dim, meta.num_languages, meta.vocab(config.label).to_vec())?;
        Ok(Self::with_model(config, model))
    }

    /// Wraps an existing model, e.g. one restored from a checkpoint.
    pub fn with_model(config: TrainConfig, model: ModelBundle) -> Self {
        Trainer {
            rates: config.learning_rates(),
            shuffle_rng: stream_rng(config.seed, Stream::Shuffle),
            selection_rng: stream_rng(config.seed, Stream::Selection),
            state: TrainState {
                epoch: 0,
                best_val: f64::NEG_INFINITY,
                best_epoch: 0,
                epochs_since_improvement: 0,
                baseline: RewardBaseline::new(config.baseline_beta),
                history: Vec::new(),
                trace: Vec::new(),
                best_snapshot: None,
            },
            config,
            model,
        }
    }

    /// One pass over `bags` in shuffled order; returns the mean bag losses.
    pub fn train_epoch(&mut self, bags: &[SpeakerBag], lambda: f64) -> Result<BagLosses> {
        if bags.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        let epoch = self.state.epoch + 1;
        let mut order: Vec<usize> = (0..bags.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let params = self.model.parameters();
        let mut sum = BagLosses::default();
        for batch in order.chunks(self.config.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let bag = &bags[i];
                let losses = match self.config.framework {
                    Framework::Mil => self.bag_step_mil(bag, scale)?,
                    Framework::Rlmil | Framework::RlmilDat => self.bag_step_policy(bag, scale, lambda)?,
                };
                self.state.trace.push((epoch, bag.speaker_id.clone(), losses));
                losses.check(epoch, &bag.speaker_id)?;
                sum.l_task += losses.l_task;
                sum.l_p += losses.l_p;
                sum.l_reg += losses.l_reg;
                sum.l_domain += losses.l_domain;
                sum.l_total += losses.l_total;
            }
            optimizer_step(&params, &self.rates)?;
        }
        let n = bags.len() as f64;
        Ok(BagLosses {
            l_task: sum.l_task / n,
            l_p: sum.l_p / n,
            l_reg: sum.l_reg / n,
            l_domain: sum.l_domain / n,
            l_total: sum.l_total / n,
        })
    }

    fn bag_step_mil(&mut self, bag: &SpeakerBag, scale: f64) -> Result<BagLosses> {
        let loss = bag_task_loss(&self.model, bag, self.config.label)?;
        let l_task = loss.item();
        if l_task.is_finite() {
            backward(&ops::scale(&loss, scale))?;
        }
        Ok(BagLosses {
            l_task,
            ..BagLosses::default()
        })
    }

    fn bag_step_policy(&mut self, bag: &SpeakerBag, scale: f64, lambda: f64) -> Result<BagLosses> {
        let cfg = &self.config;
        let model = &self.model;
        let policy = model.policy.as_ref().ok_or_else(|| Error::Config("model has no policy".into()))?;
        let label = bag.label(cfg.label);
        let h = model.encoder.encode(&Value::constant(bag.real_instances()))?;
        let n = bag.n_real;
        let all = vec![true; n];
        let h_det = h.detach();

        let logits_p = policy.logits(&h_det)?;
        let p = ops::sigmoid(&logits_p);
        let probs: Vec<f64> = p.data().iter().copied().collect();
        let samples = select(&probs, &all, cfg.bag_size, SelectMode::Sample, cfg.pool_size, &mut self.selection_rng)?;

        let mut rewards = Vec::with_capacity(samples.len());
        for s in &samples {
            let logits = model.head.forward(&ops::select_rows(&h_det, &s.chosen)?, &vec![true; s.chosen.len()])?;
            let l: Vec<f64> = logits.data().iter().copied().collect();
            rewards.push(reward(&l, label, cfg.reward));
        }
        let log_w = ops::log_sigmoid(&logits_p);
        let candidates: Vec<usize> = (0..n).collect();
        let log_probs = samples
            .iter()
            .map(|s| {
                if s.forced {
                    Ok(Value::scalar(0.0))
                } else {
                    sequence_log_prob(&log_w, &s.order, &candidates)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let b = self.state.baseline.current(&rewards);
        let l_p = policy_loss(&log_probs, &rewards, b)?;
        self.state.baseline.update(&rewards);
        let l_reg = regularizer(&p, &all, cfg.entropy_weight)?;

        let chosen = if cfg.task_from_sample {
            samples[0].chosen.clone()
        } else {
            select(&probs, &all, cfg.bag_size, SelectMode::Greedy, 1, &mut self.selection_rng)?.remove(0).chosen
        };
        let hs = ops::select_rows(&h, &chosen)?;
        let logits = model.head.forward(&hs, &vec![true; chosen.len()])?;
        let l_task = ops::cross_entropy(&logits, &[label])?;
        if l_task.item().is_finite() {
            backward(&ops::scale(&l_task, scale))?;
        }

        let mut total = ops::add(&l_p, &l_reg)?;
        let mut l_domain_value = 0.0;
        // a zero-weight adversary cannot reach the encoder; it is switched off
        // so that rlmil_dat at lambda 0 is exactly rlmil
        if let Some(domain) = model.domain.as_ref().filter(|_| lambda > 0.0) {
            let (h_dom, langs): (Value, Vec<i16>) = if cfg.domain_on_all {
                (h.clone(), bag.lang_ids[..n].to_vec())
            } else {
                (hs.clone(), chosen.iter().map(|&j| bag.lang_ids[j]).collect())
            };
            let l_domain = domain_loss(&domain.domain_logits(&h_dom, &langs, lambda)?, &langs)?;
            l_domain_value = l_domain.item();
            total = ops::add(&total, &l_domain)?;
        }
        let losses = BagLosses {
            l_task: l_task.item(),
            l_p: l_p.item(),
            l_reg: l_reg.item(),
            l_domain: l_domain_value,
            l_total: total.item(),
        };
        if losses.l_total.is_finite() {
            backward(&ops::scale(&total, scale))?;
        }
        Ok(losses)
    }

    /// Trains until `epochs` or until validation macro-F1 fails to improve
    /// for `early_stopping_patience` epochs, then restores the best weights
    /// unless `restore_best` is off.
    /// A checkpoint is written to `checkpoint` each time the best improves.
    pub fn fit(&mut self, split: &DatasetSplit, checkpoint: Option<&Path>) -> Result<FitSummary> {
        if split.validation.is_empty() {
            return Err(Error::Data("validation split is empty".into()));
        }
        let schedule = self.config.schedule();
        let mut stopped_early = false;
        while self.state.epoch < self.config.epochs {
            let lambda = schedule.lambda_at(self.state.epoch);
            let losses = self.train_epoch(&split.train, lambda)?;
            self.state.epoch += 1;
            let val = evaluate(&self.model, &self.config, &split.validation, &split.meta)?.macro_f1;
            self.state.history.push(EpochRecord {
                epoch: self.state.epoch,
                l_task: losses.l_task,
                l_p: losses.l_p,
                l_reg: losses.l_reg,
                l_domain: losses.l_domain,
                l_total: losses.l_total,
                val_macro_f1: val,
            });
            if val > self.state.best_val {
                self.state.best_val = val;
                self.state.best_epoch = self.state.epoch;
                self.state.epochs_since_improvement = 0;
                self.state.best_snapshot = Some(self.model.snapshot());
                if let Some(path) = checkpoint {
                    write_checkpoint(path, &self.config, &self.model)?;
                }
            } else {
                self.state.epochs_since_improvement += 1;
                if self.state.epochs_since_improvement >= self.config.early_stopping_patience {
                    stopped_early = true;
                    break;
                }
            }
        }
        if self.config.restore_best {
            if let Some(best) = &self.state.best_snapshot {
                self.model.restore(best)?;
            }
        }
        Ok(FitSummary {
            best_epoch: self.state.best_epoch,
            best_val_macro_f1: self.state.best_val,
            epochs_run: self.state.epoch,
            stopped_early,
        })
    }

    pub fn history_csv(&self) -> String {
        history_csv(&self.state.history)
    }

    /// Writes the per-bag loss trace and returns its path.
    pub fn dump_trace(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("loss_trace.csv");
        std::fs::write(&path, trace_csv(&self.state.trace))?;
        Ok(path)
    }
}

/// Cross-entropy of one bag through the plain MIL path (all real rows).
pub fn bag_task_loss(model: &ModelBundle, bag: &SpeakerBag, label: crate::data::LabelKind) -> Result<Value> {
    let h = model.encoder.encode(&Value::constant(bag.real_instances()))?;
    let logits = model.head.forward(&h, &vec![true; bag.n_real])?;
    ops::cross_entropy(&logits, &[bag.label(label)])
}

/// Mean MIL task loss over `bags`, as one differentiable scalar.
pub fn batch_task_loss(model: &ModelBundle, bags: &[SpeakerBag], label: crate::data::LabelKind) -> Result<Value> {
    let mut total: Option<Value> = None;
    for bag in bags {
        let l = bag_task_loss(model, bag, label)?;
        total = Some(match total {
            None => l,
            Some(t) => ops::add(&t, &l)?,
        });
    }
    let total = total.ok_or_else(|| Error::Data("empty batch".into()))?;
    Ok(ops::scale(&total, 1.0 / bags.len() as f64))
}

/// Encoder outputs of the real rows of `bag`.
pub fn encode_bag(model: &ModelBundle, bag: &SpeakerBag) -> Result<Tensor> {
    Ok(model.encoder.encode(&Value::constant(bag.real_instances()))?.data().clone())
}

/// Rows fed to the head at inference: greedy policy selection, or every real
/// row for MIL.
pub fn selected_rows(model: &ModelBundle, cfg: &TrainConfig, bag: &SpeakerBag, h: &Value) -> Result<Vec<usize>> {
    match &model.policy {
        None => Ok((0..bag.n_real).collect()),
        Some(policy) => {
            let p = ops::sigmoid(&policy.logits(h)?);
            let probs: Vec<f64> = p.data().iter().copied().collect();
            let mut rng = stream_rng(0, Stream::Selection);
            let mut out = select(&probs, &vec![true; bag.n_real], cfg.bag_size, SelectMode::Greedy, 1, &mut rng)?;
            Ok(out.remove(0).chosen)
        }
    }
}

pub fn predict(model: &ModelBundle, cfg: &TrainConfig, bag: &SpeakerBag) -> Result<usize> {
    let h = Value::constant(encode_bag(model, bag)?);
    let rows = selected_rows(model, cfg, bag, &h)?;
    let logits = model.head.forward(&ops::select_rows(&h, &rows)?, &vec![true; rows.len()])?;
    let l: Vec<f64> = logits.data().iter().copied().collect();
    if l.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logits for speaker `{}`", bag.speaker_id)));
    }
    Ok(argmax(&l))
}

/// Greedy-selection macro-F1 and accuracy on `bags`.
pub fn evaluate(model: &ModelBundle, cfg: &TrainConfig, bags: &[SpeakerBag], meta: &DatasetMeta) -> Result<SplitMetrics> {
    let vocab = meta.vocab(cfg.label);
    if vocab != model.label_vocab.as_slice() {
        return Err(Error::Config(format!(
            "label vocabulary mismatch for {}: model {:?}, dataset {:?}",
            cfg.label, model.label_vocab, vocab
        )));
    }
    if meta.dim != model.dim {
        return Err(Error::Config(format!("embedding width mismatch: model {}, dataset {}", model.dim, meta.dim)));
    }
    let mut y_true = Vec::with_capacity(bags.len());
    let mut y_pred = Vec::with_capacity(bags.len());
    for bag in bags {
        y_true.push(bag.label(cfg.label));
        y_pred.push(predict(model, cfg, bag)?);
    }
    let cm = ConfusionMatrix::new(&y_true, &y_pred, model.num_classes())?;
    Ok(SplitMetrics {
        macro_f1: cm.macro_f1(cfg.f1_average),
        accuracy: cm.accuracy(),
        bags: bags.len(),
    })
}

/// Train / validation / test metrics.
pub fn evaluate_all(model: &ModelBundle, cfg: &TrainConfig, split: &DatasetSplit) -> Result<Vec<(SplitName, SplitMetrics)>> {
    SplitName::ALL
        .iter()
        .map(|&name| Ok((name, evaluate(model, cfg, split.part(name), &split.meta)?)))
        .collect()
}
