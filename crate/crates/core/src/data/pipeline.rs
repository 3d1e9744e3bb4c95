//! End-to-end ingestion: records → imputation → binning → bags → split.

use std::fmt;
use std::path::Path;

use super::{
    build_bags, impute_ages, read_records, stratified_split, AgeScheme, BagLabels, BagReport, DatasetMeta,
    DatasetSplit, EmbedSource, HashedTextEmbedder, ImputeReport, LabelKind, LineEmbeddings, RecordEmbeddings,
    SplitRatios,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PrepareOptions<'a> {
    pub scheme: AgeScheme,
    pub whole_bag_size: usize,
    pub ratios: SplitRatios,
    pub pool_size: usize,
    pub seed: u64,
    /// Side file with one JSON embedding array per input row.
    pub embeddings: Option<&'a Path>,
    /// Fall back to hashed text features of this width when rows carry no
    /// embedding and no side file is given.
    pub hash_dim: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PrepareReport {
    pub rows: usize,
    pub languages: Vec<String>,
    pub impute: ImputeReport,
    pub bags: BagReport,
    pub split_sizes: [usize; 3],
}

impl fmt::Display for PrepareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rows read: {}", self.rows)?;
        writeln!(f, "languages: {}", self.languages.join(", "))?;
        writeln!(
            f,
            "ages derived from years: {}, propagated within speaker: {}",
            self.impute.derived, self.impute.propagated
        )?;
        writeln!(
            f,
            "dropped rows without age: {} ({} speakers)",
            self.impute.dropped,
            self.impute.dropped_speakers.len()
        )?;
        writeln!(f, "dropped empty utterances: {}", self.bags.skipped_instances)?;
        writeln!(f, "dropped speakers without utterances: {}", self.bags.skipped_speakers.len())?;
        writeln!(f, "truncated bags: {}", self.bags.truncated_speakers)?;
        let [tr, va, te] = self.split_sizes;
        write!(f, "bags: {} (train {tr}, validation {va}, test {te})", self.bags.bags)
    }
}

pub fn prepare_dataset(input: &Path, opts: &PrepareOptions) -> Result<(DatasetSplit, PrepareReport)> {
    let (records, languages) = read_records(input)?;
    let rows = records.len();
    let (records, impute) = impute_ages(records);

    let line_source;
    let record_source;
    let hash_source;
    let source: &dyn EmbedSource = if let Some(path) = opts.embeddings {
        line_source = LineEmbeddings::from_path(path)?;
        &line_source
    } else if let Some(dim) = records.iter().find_map(|r| r.embedding.as_ref().map(Vec::len)) {
        if let Some(r) = records.iter().find(|r| r.embedding.is_none()) {
            return Err(Error::Data(format!("row {} has no embedding while others do", r.row)));
        }
        record_source = RecordEmbeddings { dim };
        &record_source
    } else if let Some(dim) = opts.hash_dim {
        hash_source = HashedTextEmbedder { dim };
        &hash_source
    } else {
        return Err(Error::Data(
            "records carry no embeddings; supply --embeddings or --hash-dim".into(),
        ));
    };
    if source.dim() == 0 {
        return Err(Error::Data("embeddings have width 0".into()));
    }

    let mut gender_vocab: Vec<String> = records.iter().map(|r| r.gender.clone()).collect();
    gender_vocab.sort();
    gender_vocab.dedup();
    let labels = BagLabels {
        scheme: opts.scheme,
        gender_vocab: gender_vocab.clone(),
    };
    let (bags, bag_report) = build_bags(&records, opts.whole_bag_size, source, &labels)?;
    let num_classes = opts.scheme.num_classes();
    let [train, validation, test] =
        stratified_split(bags, opts.ratios, LabelKind::Age, num_classes, opts.pool_size, opts.seed)?;
    let report = PrepareReport {
        rows,
        languages: languages.codes().to_vec(),
        impute,
        bags: bag_report,
        split_sizes: [train.len(), validation.len(), test.len()],
    };
    let meta = DatasetMeta {
        dim: source.dim(),
        whole_bag_size: opts.whole_bag_size,
        num_languages: languages.len(),
        age_vocab: opts.scheme.labels().iter().map(|s| s.to_string()).collect(),
        gender_vocab,
    };
    Ok((
        DatasetSplit {
            meta,
            train,
            validation,
            test,
        },
        report,
    ))
}
