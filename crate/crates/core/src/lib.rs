//! Multiple-instance speaker-attribute prediction with reinforcement-learned
//! instance selection and a gradient-reversal language-adversarial branch.

pub mod autodiff;
pub mod compare;
pub mod config;
pub mod dat;
pub mod data;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod mil;
pub mod model;
pub mod nn;
pub mod policy;
pub mod probe;
pub mod run;
pub mod stats;
pub mod sweep;
pub mod trainer;

pub use error::{Error, Result};
