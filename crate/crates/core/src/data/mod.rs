//! Ingestion, preprocessing, bag assembly, splitting and serialisation.

pub mod age;
pub mod bags;
pub mod format;
pub mod pipeline;
pub mod records;
pub mod split;
pub mod synth;
pub mod text;

pub use age::{bin_age, AgeScheme};
pub use bags::{build_bags, BagLabels, BagReport, EmbedSource, HashedTextEmbedder, LineEmbeddings, RecordEmbeddings, SpeakerBag};
pub use pipeline::{prepare_dataset, PrepareOptions, PrepareReport};
pub use format::{load_dataset, read_dataset, serialize_dataset, write_dataset};
pub use records::{impute_ages, read_records, ImputeReport, LanguageMap, UtteranceRecord};
pub use split::{stratified_split, SplitRatios, StratKey};
pub use synth::{synth_dataset, InformativeMode, SynthOutput, SynthSpec};
pub use text::preprocess_text;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which speaker attribute a model predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LabelKind {
    Age,
    Gender,
}

impl fmt::Display for LabelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelKind::Age => "age",
            LabelKind::Gender => "gender",
        })
    }
}

impl FromStr for LabelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "age" => Ok(LabelKind::Age),
            "gender" => Ok(LabelKind::Gender),
            other => Err(Error::Config(format!("unknown label `{other}` (age|gender)"))),
        }
    }
}

/// Dataset-wide facts shared by every bag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetMeta {
    pub dim: usize,
    pub whole_bag_size: usize,
    pub num_languages: usize,
    pub age_vocab: Vec<String>,
    pub gender_vocab: Vec<String>,
}

impl DatasetMeta {
    pub fn vocab(&self, label: LabelKind) -> &[String] {
        match label {
            LabelKind::Age => &self.age_vocab,
            LabelKind::Gender => &self.gender_vocab,
        }
    }
}

/// Train / validation / test partition, disjoint by speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub meta: DatasetMeta,
    pub train: Vec<SpeakerBag>,
    pub validation: Vec<SpeakerBag>,
    pub test: Vec<SpeakerBag>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Validation, SplitName::Test];
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        })
    }
}

impl DatasetSplit {
    pub fn part(&self, name: SplitName) -> &[SpeakerBag] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }

    pub fn all_bags(&self) -> impl Iterator<Item = &SpeakerBag> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }

    /// Per-class bag counts for the given part and label.
    pub fn class_histogram(&self, name: SplitName, label: LabelKind) -> Vec<usize> {
        let mut counts = vec![0; self.meta.vocab(label).len()];
        for bag in self.part(name) {
            counts[bag.label(label)] += 1;
        }
        counts
    }

    /// Real-instance counts per language id for the given part.
    pub fn language_histogram(&self, name: SplitName) -> Vec<usize> {
        let mut counts = vec![0; self.meta.num_languages];
        for bag in self.part(name) {
            for &l in &bag.lang_ids[..bag.n_real] {
                counts[l as usize] += 1;
            }
        }
        counts
    }
}
