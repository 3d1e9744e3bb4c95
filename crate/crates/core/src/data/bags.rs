//! Per-speaker bags: padded instance matrix, mask and language ids.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::Array2;

use super::age::{bin_age, AgeScheme};
use super::records::UtteranceRecord;
use super::text::preprocess_text;
use super::LabelKind;
use crate::error::{Error, Result};

/// Language id stored for padding rows.
pub const PAD_LANG: i16 = -1;

/// One speaker's padded bag of instance embeddings.
///
/// Rows `0..n_real` are real instances; the rest are zero padding with mask
/// `false` and language id [`PAD_LANG`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerBag {
    pub speaker_id: String,
    pub embeddings: Array2<f32>,
    pub mask: Vec<bool>,
    pub lang_ids: Vec<i16>,
    pub age_label: u16,
    pub gender_label: u16,
    pub n_real: usize,
}

impl SpeakerBag {
    /// Pads `rows` (embedding, language) up to `whole_bag_size`, truncating
    /// anything beyond it.
    pub fn assemble(
        speaker_id: impl Into<String>,
        rows: &[(Vec<f32>, usize)],
        whole_bag_size: usize,
        dim: usize,
        age_label: u16,
        gender_label: u16,
    ) -> Result<Self> {
        if whole_bag_size == 0 {
            return Err(Error::Config("whole_bag_size must be >= 1".into()));
        }
        let speaker_id = speaker_id.into();
        let n_real = rows.len().min(whole_bag_size);
        let mut embeddings = Array2::zeros((whole_bag_size, dim));
        let mut lang_ids = vec![PAD_LANG; whole_bag_size];
        for (i, (emb, lang)) in rows.iter().take(n_real).enumerate() {
            if emb.len() != dim {
                return Err(Error::Data(format!(
                    "speaker `{speaker_id}`: embedding width {} != {dim}",
                    emb.len()
                )));
            }
            embeddings.row_mut(i).assign(&ndarray::ArrayView1::from(emb.as_slice()));
            lang_ids[i] = i16::try_from(*lang).map_err(|_| Error::Data(format!("language id {lang} too large")))?;
        }
        let mask = (0..whole_bag_size).map(|i| i < n_real).collect();
        Ok(SpeakerBag {
            speaker_id,
            embeddings,
            mask,
            lang_ids,
            age_label,
            gender_label,
            n_real,
        })
    }

    pub fn label(&self, kind: LabelKind) -> usize {
        match kind {
            LabelKind::Age => self.age_label as usize,
            LabelKind::Gender => self.gender_label as usize,
        }
    }

    /// The real (unpadded) rows as `f64`.
    pub fn real_instances(&self) -> Array2<f64> {
        self.embeddings
            .slice(ndarray::s![..self.n_real, ..])
            .mapv(f64::from)
    }

    pub fn whole_bag_size(&self) -> usize {
        self.mask.len()
    }
}

/// Supplies an embedding for a record, or `None` when the record has no
/// usable content.
pub trait EmbedSource {
    fn dim(&self) -> usize;
    fn embed(&self, record: &UtteranceRecord) -> Result<Option<Vec<f32>>>;
}

/// Uses the embedding carried on the record itself.
#[derive(Debug, Clone)]
pub struct RecordEmbeddings {
    pub dim: usize,
}

impl EmbedSource for RecordEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, record: &UtteranceRecord) -> Result<Option<Vec<f32>>> {
        Ok(record.embedding.clone())
    }
}

/// Embeddings from a side file with one JSON array per line, aligned with the
/// rows of the input file.
#[derive(Debug, Clone)]
pub struct LineEmbeddings {
    dim: usize,
    rows: Vec<Vec<f32>>,
}

impl LineEmbeddings {
    pub fn from_path(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut rows = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v: Vec<f32> = serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
            rows.push(v);
        }
        let dim = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(Error::Data(format!("embedding line {} has width {} != {dim}", i + 1, r.len())));
        }
        Ok(LineEmbeddings { dim, rows })
    }
}

impl EmbedSource for LineEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, record: &UtteranceRecord) -> Result<Option<Vec<f32>>> {
        Ok(self.rows.get(record.row).cloned())
    }
}

/// Signed feature hashing of preprocessed tokens, L2-normalised. A
/// dependency-free stand-in when no encoder output is available.
#[derive(Debug, Clone)]
pub struct HashedTextEmbedder {
    pub dim: usize,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl EmbedSource for HashedTextEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, record: &UtteranceRecord) -> Result<Option<Vec<f32>>> {
        let Some(text) = &record.text else {
            return Ok(record.embedding.clone());
        };
        let clean = preprocess_text(text);
        if clean.is_empty() {
            return Ok(None);
        }
        let mut v = vec![0f64; self.dim];
        for token in clean.split(' ') {
            let h = fnv1a(token.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(Some(v.iter().map(|x| (x / norm) as f32).collect()))
    }
}

/// How bag-level labels are derived from the first record of each speaker.
#[derive(Debug, Clone)]
pub struct BagLabels {
    pub scheme: AgeScheme,
    pub gender_vocab: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BagReport {
    pub bags: usize,
    pub skipped_speakers: Vec<String>,
    pub truncated_speakers: usize,
    pub skipped_instances: usize,
}

/// Groups records by speaker (first-appearance order), embeds each utterance,
/// truncates to `whole_bag_size` and pads.
pub fn build_bags(
    records: &[UtteranceRecord],
    whole_bag_size: usize,
    source: &dyn EmbedSource,
    labels: &BagLabels,
) -> Result<(Vec<SpeakerBag>, BagReport)> {
    if whole_bag_size == 0 {
        return Err(Error::Config("whole_bag_size must be >= 1".into()));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<&UtteranceRecord>> = HashMap::new();
    for r in records {
        groups
            .entry(r.speaker_id.as_str())
            .or_insert_with(|| {
                order.push(r.speaker_id.as_str());
                Vec::new()
            })
            .push(r);
    }
    let dim = source.dim();
    let mut report = BagReport::default();
    let mut bags = Vec::with_capacity(order.len());
    for speaker in order {
        let group = &groups[speaker];
        let first = group[0];
        let mut rows = Vec::new();
        for r in group {
            match source.embed(r)? {
                Some(e) if e.len() != dim => {
                    return Err(Error::Data(format!(
                        "speaker `{speaker}` row {}: embedding width {} != {dim}",
                        r.row,
                        e.len()
                    )))
                }
                Some(e) => rows.push((e, r.lang_id)),
                None => report.skipped_instances += 1,
            }
        }
        if rows.is_empty() {
            report.skipped_speakers.push(speaker.to_owned());
            continue;
        }
        if rows.len() > whole_bag_size {
            report.truncated_speakers += 1;
        }
        let age = first
            .age
            .ok_or_else(|| Error::Data(format!("speaker `{speaker}` has no age after imputation")))?;
        let age_label = bin_age(age, labels.scheme)? as u16;
        let gender_label = labels
            .gender_vocab
            .iter()
            .position(|g| *g == first.gender)
            .ok_or_else(|| Error::Data(format!("gender `{}` not in vocabulary", first.gender)))? as u16;
        bags.push(SpeakerBag::assemble(speaker, &rows, whole_bag_size, dim, age_label, gender_label)?);
    }
    report.bags = bags.len();
    Ok((bags, report))
}
