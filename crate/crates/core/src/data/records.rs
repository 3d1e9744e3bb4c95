//! Per-utterance records and the CSV / JSON-lines readers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// One utterance (tweet or transcript) of one speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    /// Position in the source file; used to look up external embeddings.
    pub row: usize,
    pub speaker_id: String,
    pub text: Option<String>,
    pub embedding: Option<Vec<f32>>,
    pub age: Option<f64>,
    pub birth_year: Option<i32>,
    pub upload_year: Option<i32>,
    pub gender: String,
    pub lang_id: usize,
}

/// Maps language codes to dense ids in sorted code order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LanguageMap {
    codes: Vec<String>,
}

impl LanguageMap {
    pub fn from_codes<'a>(codes: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = codes.into_iter().collect();
        LanguageMap {
            codes: set.into_iter().map(str::to_owned).collect(),
        }
    }

    pub fn id(&self, code: &str) -> Option<usize> {
        self.codes.binary_search_by(|c| c.as_str().cmp(code)).ok()
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    speaker_id: String,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    embedding: Option<Vec<f32>>,
    #[serde(default)]
    age: Option<f64>,
    #[serde(default)]
    birth_year: Option<i32>,
    #[serde(default)]
    upload_year: Option<i32>,
    gender: String,
    lang_code: String,
}

const REQUIRED_CSV_COLUMNS: [&str; 5] = ["speaker_id", "text", "age", "gender", "lang_code"];

fn empty_to_none(s: Option<&str>) -> Option<&str> {
    s.map(str::trim).filter(|v| !v.is_empty())
}

fn parse_opt<T: std::str::FromStr>(field: Option<&str>, column: &str, line: usize) -> Result<Option<T>> {
    match empty_to_none(field) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| Error::Data(format!("row {line}: cannot parse `{v}` in column `{column}`"))),
    }
}

fn read_csv(path: &Path) -> Result<Vec<RawRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    for name in REQUIRED_CSV_COLUMNS {
        if col(name).is_none() {
            return Err(Error::Data(format!("missing required column `{name}` in {}", path.display())));
        }
    }
    let idx: HashMap<&str, usize> = ["speaker_id", "text", "age", "gender", "lang_code", "birth_year", "upload_year"]
        .into_iter()
        .filter_map(|n| col(n).map(|i| (n, i)))
        .collect();
    let mut out = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let get = |name: &str| idx.get(name).and_then(|&i| rec.get(i));
        out.push(RawRecord {
            speaker_id: get("speaker_id").unwrap_or_default().trim().to_owned(),
            text: get("text").map(str::to_owned),
            embedding: None,
            age: parse_opt(get("age"), "age", line)?,
            birth_year: parse_opt(get("birth_year"), "birth_year", line)?,
            upload_year: parse_opt(get("upload_year"), "upload_year", line)?,
            gender: get("gender").unwrap_or_default().trim().to_owned(),
            lang_code: get("lang_code").unwrap_or_default().trim().to_owned(),
        });
    }
    Ok(out)
}

fn read_jsonl(path: &Path) -> Result<Vec<RawRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (line, text) in reader.lines().enumerate() {
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), line + 1)))?;
        out.push(raw);
    }
    Ok(out)
}

/// Reads `.csv` (named header columns) or `.jsonl` records and assigns
/// language ids.
pub fn read_records(path: &Path) -> Result<(Vec<UtteranceRecord>, LanguageMap)> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
    let raw = match ext {
        "csv" => read_csv(path)?,
        "jsonl" | "json" | "ndjson" => read_jsonl(path)?,
        other => return Err(Error::Config(format!("unsupported input extension `{other}` (csv|jsonl)"))),
    };
    let languages = LanguageMap::from_codes(raw.iter().map(|r| r.lang_code.as_str()));
    let records = raw
        .into_iter()
        .enumerate()
        .map(|(row, r)| {
            if r.speaker_id.is_empty() {
                return Err(Error::Data(format!("row {row}: empty speaker_id")));
            }
            if r.text.is_none() && r.embedding.is_none() {
                return Err(Error::Data(format!("row {row}: neither text nor embedding present")));
            }
            Ok(UtteranceRecord {
                row,
                lang_id: languages.id(&r.lang_code).expect("code collected above"),
                speaker_id: r.speaker_id,
                text: r.text,
                embedding: r.embedding,
                age: r.age,
                birth_year: r.birth_year,
                upload_year: r.upload_year,
                gender: r.gender.to_lowercase(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((records, languages))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImputeReport {
    pub derived: usize,
    pub propagated: usize,
    pub dropped: usize,
    pub dropped_speakers: Vec<String>,
}

/// Two-step age imputation: derive `upload_year - birth_year`, then copy the
/// first known age of each speaker to that speaker's other rows. Rows still
/// without an age are dropped and counted.
pub fn impute_ages(records: Vec<UtteranceRecord>) -> (Vec<UtteranceRecord>, ImputeReport) {
    let mut report = ImputeReport::default();
    let mut records = records;
    for r in &mut records {
        if r.age.is_none() {
            if let (Some(birth), Some(upload)) = (r.birth_year, r.upload_year) {
                r.age = Some(f64::from(upload - birth));
                report.derived += 1;
            }
        }
    }
    let mut known: HashMap<String, f64> = HashMap::new();
    for r in &records {
        if let Some(age) = r.age {
            known.entry(r.speaker_id.clone()).or_insert(age);
        }
    }
    let mut dropped_speakers = BTreeMap::new();
    let kept = records
        .into_iter()
        .filter_map(|mut r| {
            if r.age.is_none() {
                match known.get(&r.speaker_id) {
                    Some(&age) => {
                        r.age = Some(age);
                        report.propagated += 1;
                    }
                    None => {
                        report.dropped += 1;
                        dropped_speakers.insert(r.speaker_id.clone(), ());
                        return None;
                    }
                }
            }
            Some(r)
        })
        .collect();
    report.dropped_speakers = dropped_speakers.into_keys().collect();
    (kept, report)
}
