//! Domain-adversarial branch: gradient reversal into a language classifier.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{ops, ParamGroup, Parameter, Value};
use crate::data::bags::PAD_LANG;
use crate::error::{Error, Result};
use crate::nn::Mlp;

/// `d → hd (ReLU) → L` language classifier.
#[derive(Debug, Clone)]
pub struct DomainClassifier {
    pub mlp: Mlp,
}

impl DomainClassifier {
    pub fn new(dim: usize, hidden: usize, num_languages: usize, rng: &mut impl Rng) -> Self {
        DomainClassifier {
            mlp: Mlp::new("domain", ParamGroup::Domain, &[dim, hidden, num_languages], rng),
        }
    }

    pub fn num_languages(&self) -> usize {
        self.mlp.out_dim()
    }

    /// Language logits (`k × L`) for selected real instances, routed through
    /// a gradient reversal layer with coefficient `lambda`.
    pub fn domain_logits(&self, h_selected: &Value, lang_ids: &[i16], lambda: f64) -> Result<Value> {
        let (k, d) = h_selected.shape();
        if k == 0 {
            return Err(Error::EmptyBag("domain_logits over zero instances".into()));
        }
        if lang_ids.len() != k {
            return Err(Error::shape("domain_logits lang ids", (k, d), (lang_ids.len(), 1)));
        }
        if let Some(row) = lang_ids.iter().position(|&l| l == PAD_LANG) {
            return Err(Error::Contract(format!("domain_logits received padded row {row}")));
        }
        self.mlp.forward(&ops::grl(h_selected, lambda)?)
    }

    pub fn parameters(&self) -> Vec<Parameter> {
        self.mlp.parameters()
    }
}

/// Mean cross-entropy of language logits against instance language ids.
pub fn domain_loss(logits: &Value, lang_ids: &[i16]) -> Result<Value> {
    if let Some(row) = lang_ids.iter().position(|&l| l < 0) {
        return Err(Error::Contract(format!(
            "domain_loss: padding language id at row {row}; padding must be filtered upstream"
        )));
    }
    let targets: Vec<usize> = lang_ids.iter().map(|&l| l as usize).collect();
    ops::cross_entropy(logits, &targets)
}

/// GRL coefficient schedule over epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GrlSchedule {
    Constant { lambda0: f64 },
    /// `lambda0 * (2 / (1 + exp(-10 p)) - 1)` with `p = min(epoch / horizon, 1)`.
    Ramp { lambda0: f64, horizon: usize },
}

impl GrlSchedule {
    pub fn lambda_at(&self, epoch: usize) -> f64 {
        match *self {
            GrlSchedule::Constant { lambda0 } => lambda0,
            GrlSchedule::Ramp { lambda0, horizon } => {
                let p = if horizon == 0 {
                    1.0
                } else {
                    (epoch as f64 / horizon as f64).min(1.0)
                };
                lambda0 * (2.0 / (1.0 + (-10.0 * p).exp()) - 1.0)
            }
        }
    }

    pub fn lambda0(&self) -> f64 {
        match *self {
            GrlSchedule::Constant { lambda0 } | GrlSchedule::Ramp { lambda0, .. } => lambda0,
        }
    }
}

/// Schedule family name, as used in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMode {
    Constant,
    Ramp,
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleMode::Constant => "constant",
            ScheduleMode::Ramp => "ramp",
        })
    }
}

impl FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(ScheduleMode::Constant),
            "ramp" => Ok(ScheduleMode::Ramp),
            other => Err(Error::Config(format!("unknown GRL schedule `{other}` (constant|ramp)"))),
        }
    }
}
