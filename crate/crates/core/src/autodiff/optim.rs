use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::{Tensor, Value};
use crate::error::{Error, Result};

/// Learning-rate group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamGroup {
    /// Pooling and classification head.
    Task,
    Encoder,
    /// Instance-selection policy.
    Actor,
    /// Language classifier.
    Domain,
}

impl ParamGroup {
    pub fn tag(self) -> u8 {
        match self {
            ParamGroup::Task => 0,
            ParamGroup::Encoder => 1,
            ParamGroup::Actor => 2,
            ParamGroup::Domain => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => ParamGroup::Task,
            1 => ParamGroup::Encoder,
            2 => ParamGroup::Actor,
            3 => ParamGroup::Domain,
            _ => return None,
        })
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamGroup::Task => "task",
            ParamGroup::Encoder => "encoder",
            ParamGroup::Actor => "actor",
            ParamGroup::Domain => "domain",
        })
    }
}

impl FromStr for ParamGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "task" => Ok(ParamGroup::Task),
            "encoder" => Ok(ParamGroup::Encoder),
            "actor" => Ok(ParamGroup::Actor),
            "domain" => Ok(ParamGroup::Domain),
            other => Err(Error::Config(format!("unknown parameter group `{other}`"))),
        }
    }
}

/// A named trainable leaf.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub group: ParamGroup,
    pub value: Value,
}

impl Parameter {
    pub fn new(name: impl Into<String>, group: ParamGroup, init: Tensor) -> Self {
        Parameter {
            name: name.into(),
            group,
            value: Value::variable(init),
        }
    }
}

/// Learning rate per parameter group.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningRates(BTreeMap<ParamGroup, f64>);

impl LearningRates {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, group: ParamGroup, rate: f64) -> Self {
        self.0.insert(group, rate);
        self
    }

    pub fn get(&self, group: ParamGroup) -> Option<f64> {
        self.0.get(&group).copied()
    }
}

/// Plain SGD over every parameter with its group's rate, then zeroes all
/// gradients.
pub fn optimizer_step(params: &[Parameter], rates: &LearningRates) -> Result<()> {
    for p in params {
        if rates.get(p.group).is_none() {
            return Err(Error::Config(format!(
                "no learning rate for group `{}` (parameter `{}`)",
                p.group, p.name
            )));
        }
    }
    for p in params {
        let rate = rates.get(p.group).unwrap();
        if rate != 0.0 {
            p.value.update_data(|data, grad| data.scaled_add(-rate, grad));
        }
    }
    reset_gradients(params);
    Ok(())
}

pub fn reset_gradients(params: &[Parameter]) {
    for p in params {
        p.value.zero_grad();
    }
}
