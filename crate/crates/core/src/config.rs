//! Training configuration and its flat `key = value` file format.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::autodiff::{LearningRates, ParamGroup};
use crate::dat::{GrlSchedule, ScheduleMode};
use crate::data::LabelKind;
use crate::error::{Error, Result};
use crate::metrics::MacroAverage;
use crate::mil::PoolKind;
use crate::policy::RewardKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Framework {
    Mil,
    Rlmil,
    RlmilDat,
}

impl Framework {
    pub const ALL: [Framework; 3] = [Framework::Mil, Framework::Rlmil, Framework::RlmilDat];

    pub fn uses_policy(self) -> bool {
        self != Framework::Mil
    }

    pub fn uses_domain(self) -> bool {
        self == Framework::RlmilDat
    }
}

impl fmt::Display for Framework {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Framework::Mil => "mil",
            Framework::Rlmil => "rlmil",
            Framework::RlmilDat => "rlmil_dat",
        })
    }
}

impl FromStr for Framework {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "mil" => Ok(Framework::Mil),
            "rlmil" | "rl_mil" => Ok(Framework::Rlmil),
            "rlmil_dat" | "rl_mil_dat" | "dat" => Ok(Framework::RlmilDat),
            other => Err(Error::Config(format!("unknown framework `{other}` (mil|rlmil|rlmil_dat)"))),
        }
    }
}

/// Every knob of a training run. Field names double as config-file keys.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub framework: Framework,
    pub label: LabelKind,
    pub pooling: PoolKind,
    pub lr_task: f64,
    pub lr_actor: f64,
    pub lr_encoder: f64,
    pub lr_domain: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub early_stopping_patience: usize,
    pub bag_size: usize,
    pub whole_bag_size: usize,
    pub pool_size: usize,
    pub encoder_hidden: usize,
    pub hdim: usize,
    pub hp: usize,
    /// Domain classifier width; `None` means "same as `hdim`".
    pub hd: Option<usize>,
    pub attention_dim: usize,
    pub grl_schedule: ScheduleMode,
    pub grl_lambda: f64,
    pub grl_horizon: usize,
    pub entropy_weight: f64,
    pub baseline_beta: f64,
    pub reward: RewardKind,
    pub task_from_sample: bool,
    pub domain_on_all: bool,
    pub f1_average: MacroAverage,
    /// Reload the best-validation weights when `fit` finishes.
    pub restore_best: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            framework: Framework::RlmilDat,
            label: LabelKind::Age,
            pooling: PoolKind::Attention,
            lr_task: 0.05,
            lr_actor: 0.05,
            lr_encoder: 0.05,
            lr_domain: 0.05,
            batch_size: 16,
            epochs: 30,
            early_stopping_patience: 10,
            bag_size: 20,
            whole_bag_size: 100,
            pool_size: 10,
            encoder_hidden: 256,
            hdim: 256,
            hp: 64,
            hd: None,
            attention_dim: 64,
            grl_schedule: ScheduleMode::Constant,
            grl_lambda: 1.0,
            grl_horizon: 10,
            entropy_weight: 0.01,
            baseline_beta: 0.9,
            reward: RewardKind::LogLikelihood,
            task_from_sample: false,
            domain_on_all: false,
            f1_average: MacroAverage::AllClasses,
            restore_best: true,
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected a boolean, got `{value}`"))),
    }
}

impl TrainConfig {
    pub fn domain_hidden(&self) -> usize {
        self.hd.unwrap_or(self.hdim)
    }

    pub fn schedule(&self) -> GrlSchedule {
        match self.grl_schedule {
            ScheduleMode::Constant => GrlSchedule::Constant {
                lambda0: self.grl_lambda,
            },
            ScheduleMode::Ramp => GrlSchedule::Ramp {
                lambda0: self.grl_lambda,
                horizon: self.grl_horizon,
            },
        }
    }

    /// Learning rates for the groups this framework trains. Rates of unused
    /// components are ignored.
    pub fn learning_rates(&self) -> LearningRates {
        let mut rates = LearningRates::new()
            .with(ParamGroup::Task, self.lr_task)
            .with(ParamGroup::Encoder, self.lr_encoder);
        if self.framework.uses_policy() {
            rates = rates.with(ParamGroup::Actor, self.lr_actor);
        }
        if self.framework.uses_domain() {
            rates = rates.with(ParamGroup::Domain, self.lr_domain);
        }
        rates
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        for (key, v) in [
            ("lr_task", self.lr_task),
            ("lr_actor", self.lr_actor),
            ("lr_encoder", self.lr_encoder),
            ("lr_domain", self.lr_domain),
            ("entropy_weight", self.entropy_weight),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("`{key}` must be finite and >= 0, got {v}"));
            }
        }
        if !(self.grl_lambda.is_finite() && self.grl_lambda >= 0.0) {
            return bad(format!("`grl_lambda` must be finite and >= 0, got {}", self.grl_lambda));
        }
        if !(0.0..1.0).contains(&self.baseline_beta) {
            return bad(format!("`baseline_beta` must be in [0, 1), got {}", self.baseline_beta));
        }
        for (key, v) in [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("early_stopping_patience", self.early_stopping_patience),
            ("bag_size", self.bag_size),
            ("whole_bag_size", self.whole_bag_size),
            ("pool_size", self.pool_size),
            ("encoder_hidden", self.encoder_hidden),
            ("hdim", self.hdim),
            ("hp", self.hp),
            ("attention_dim", self.attention_dim),
            ("domain_hidden", self.domain_hidden()),
        ] {
            if v == 0 {
                return bad(format!("`{key}` must be >= 1"));
            }
        }
        if self.early_stopping_patience > self.epochs {
            return bad(format!(
                "early_stopping_patience ({}) must not exceed epochs ({})",
                self.early_stopping_patience, self.epochs
            ));
        }
        Ok(())
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "framework" => self.framework = value.parse()?,
            "label" => self.label = value.parse()?,
            "pooling" => self.pooling = value.parse()?,
            "lr_task" => self.lr_task = parse(key, value)?,
            "lr_actor" => self.lr_actor = parse(key, value)?,
            "lr_encoder" => self.lr_encoder = parse(key, value)?,
            "lr_domain" => self.lr_domain = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "early_stopping_patience" => self.early_stopping_patience = parse(key, value)?,
            "bag_size" => self.bag_size = parse(key, value)?,
            "whole_bag_size" => self.whole_bag_size = parse(key, value)?,
            "pool_size" => self.pool_size = parse(key, value)?,
            "encoder_hidden" => self.encoder_hidden = parse(key, value)?,
            "hdim" => self.hdim = parse(key, value)?,
            "hp" => self.hp = parse(key, value)?,
            "hd" => {
                self.hd = match value {
                    "" | "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "attention_dim" => self.attention_dim = parse(key, value)?,
            "grl_schedule" => self.grl_schedule = value.parse()?,
            "grl_lambda" => self.grl_lambda = parse(key, value)?,
            "grl_horizon" => self.grl_horizon = parse(key, value)?,
            "entropy_weight" => self.entropy_weight = parse(key, value)?,
            "baseline_beta" => self.baseline_beta = parse(key, value)?,
            "reward" => self.reward = value.parse()?,
            "task_from_sample" => self.task_from_sample = parse_bool(key, value)?,
            "domain_on_all" => self.domain_on_all = parse_bool(key, value)?,
            "f1_average" => {
                self.f1_average = match value {
                    "all" => MacroAverage::AllClasses,
                    "present" => MacroAverage::PresentClasses,
                    v => return Err(Error::Config(format!("`f1_average`: expected all|present, got `{v}`"))),
                }
            }
            "restore_best" => self.restore_best = parse_bool(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let hd = self.hd.map_or_else(|| "auto".to_string(), |v| v.to_string());
        let f1 = match self.f1_average {
            MacroAverage::AllClasses => "all",
            MacroAverage::PresentClasses => "present",
        };
        let fields: [(&str, String); 29] = [
            ("framework", self.framework.to_string()),
            ("label", self.label.to_string()),
            ("pooling", self.pooling.to_string()),
            ("lr_task", self.lr_task.to_string()),
            ("lr_actor", self.lr_actor.to_string()),
            ("lr_encoder", self.lr_encoder.to_string()),
            ("lr_domain", self.lr_domain.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("early_stopping_patience", self.early_stopping_patience.to_string()),
            ("bag_size", self.bag_size.to_string()),
            ("whole_bag_size", self.whole_bag_size.to_string()),
            ("pool_size", self.pool_size.to_string()),
            ("encoder_hidden", self.encoder_hidden.to_string()),
            ("hdim", self.hdim.to_string()),
            ("hp", self.hp.to_string()),
            ("hd", hd),
            ("attention_dim", self.attention_dim.to_string()),
            ("grl_schedule", self.grl_schedule.to_string()),
            ("grl_lambda", self.grl_lambda.to_string()),
            ("grl_horizon", self.grl_horizon.to_string()),
            ("entropy_weight", self.entropy_weight.to_string()),
            ("baseline_beta", self.baseline_beta.to_string()),
            ("reward", self.reward.to_string()),
            ("task_from_sample", self.task_from_sample.to_string()),
            ("domain_on_all", self.domain_on_all.to_string()),
            ("f1_average", f1.to_string()),
            ("restore_best", self.restore_best.to_string()),
            ("seed", self.seed.to_string()),
        ];
        for (k, v) in fields {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Applies `key = value` lines on top of the defaults. Blank lines and
    /// `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected `key = value`", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let cfg = TrainConfig {
            framework: Framework::Rlmil,
            label: LabelKind::Gender,
            pooling: PoolKind::Max,
            lr_task: 0.123456789,
            hd: Some(17),
            grl_schedule: ScheduleMode::Ramp,
            reward: RewardKind::Accuracy,
            task_from_sample: true,
            f1_average: MacroAverage::PresentClasses,
            seed: 99,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        let d = TrainConfig::default();
        assert_eq!(TrainConfig::from_text(&d.to_text()).unwrap(), d);
    }

    #[test]
    fn comments_and_unknown_keys() {
        let cfg = TrainConfig::from_text("# c\n\nepochs = 5 # inline\nearly_stopping_patience=2\n").unwrap();
        assert_eq!((cfg.epochs, cfg.early_stopping_patience), (5, 2));
        assert!(matches!(TrainConfig::from_text("nope = 1"), Err(Error::Config(_))));
        assert!(matches!(TrainConfig::from_text("epochs"), Err(Error::Config(_))));
    }

    #[test]
    fn patience_may_not_exceed_epochs() {
        let cfg = TrainConfig {
            epochs: 3,
            early_stopping_patience: 4,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn rates_follow_framework() {
        let mil = TrainConfig {
            framework: Framework::Mil,
            ..TrainConfig::default()
        };
        assert!(mil.learning_rates().get(ParamGroup::Actor).is_none());
        assert!(TrainConfig::default().learning_rates().get(ParamGroup::Domain).is_some());
        assert_eq!(TrainConfig::default().domain_hidden(), 256);
    }
}
