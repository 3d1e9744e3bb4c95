use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Age binning schemes. Bins are right-closed: a value equal to an edge falls
/// into the lower bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgeScheme {
    /// Edges 18, 27, 40, 55, 70.
    Twitter6,
    /// Edges 30, 55.
    Vox3,
}

impl AgeScheme {
    pub fn edges(self) -> &'static [f64] {
        match self {
            AgeScheme::Twitter6 => &[18.0, 27.0, 40.0, 55.0, 70.0],
            AgeScheme::Vox3 => &[30.0, 55.0],
        }
    }

    pub fn labels(self) -> &'static [&'static str] {
        match self {
            AgeScheme::Twitter6 => &["Youth", "Young Adult", "Adult", "Middle-aged", "Senior", "Elderly"],
            AgeScheme::Vox3 => &["Young", "Middle-aged", "Senior"],
        }
    }

    pub fn num_classes(self) -> usize {
        self.labels().len()
    }
}

impl fmt::Display for AgeScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgeScheme::Twitter6 => "twitter6",
            AgeScheme::Vox3 => "vox3",
        })
    }
}

impl FromStr for AgeScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "twitter6" => Ok(AgeScheme::Twitter6),
            "vox3" => Ok(AgeScheme::Vox3),
            other => Err(Error::Config(format!("unknown age scheme `{other}` (twitter6|vox3)"))),
        }
    }
}

/// Class index of `age` under `scheme`.
pub fn bin_age(age: f64, scheme: AgeScheme) -> Result<usize> {
    if age.is_nan() {
        return Err(Error::Data("age is NaN".into()));
    }
    Ok(scheme.edges().iter().take_while(|&&edge| age > edge).count())
}
