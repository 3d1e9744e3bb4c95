//! Cross-framework comparison over seeds: per-cell means and paired tests of
//! RLMIL-DAT against MIL and against RLMIL.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Framework;
use crate::error::{Error, Result};
use crate::stats::{mean, normality_check, paired_t_test, sample_sd, Normality, PairedTTest};

pub const RESULTS_HEADER: [&str; 8] = ["encoder", "pooling", "label", "framework", "seed", "split", "macro_f1", "accuracy"];

pub const COMPARISON_HEADER: [&str; 13] = [
    "encoder",
    "pooling",
    "label",
    "mil",
    "rlmil",
    "rlmil_dat",
    "delta_mil",
    "ci95_mil",
    "p_mil",
    "delta_rlmil",
    "ci95_rlmil",
    "p_rlmil",
    "n_seeds",
];

/// One line of a run-results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub encoder: String,
    pub pooling: String,
    pub label: String,
    pub framework: String,
    pub seed: u64,
    pub split: String,
    pub macro_f1: f64,
    pub accuracy: f64,
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    for col in RESULTS_HEADER {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Data(format!("{}: missing column `{col}`", path.display())));
        }
    }
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

pub fn write_results(path: &Path, records: &[ResultRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CellKey {
    pub encoder: String,
    pub pooling: String,
    pub label: String,
}

impl std::fmt::Display for CellKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.encoder, self.pooling, self.label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub cell: CellKey,
    pub mil: Option<f64>,
    pub rlmil: Option<f64>,
    pub rlmil_dat: Option<f64>,
    /// RLMIL-DAT minus MIL.
    pub vs_mil: Option<PairedTTest>,
    /// RLMIL-DAT minus RLMIL.
    pub vs_rlmil: Option<PairedTTest>,
    pub n_seeds: usize,
}

impl ComparisonRow {
    pub fn mean(&self, fw: Framework) -> Option<f64> {
        match fw {
            Framework::Mil => self.mil,
            Framework::Rlmil => self.rlmil,
            Framework::RlmilDat => self.rlmil_dat,
        }
    }
}

/// Per-seed scores of one framework in one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedScores {
    pub cell: CellKey,
    pub framework: Framework,
    pub scores: BTreeMap<u64, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub series: Vec<SeedScores>,
    pub warnings: Vec<String>,
}

/// Builds the comparison from the records of one split (usually `test`).
/// Cells keep their order of first appearance.
pub fn build_comparison(records: &[ResultRecord], split: &str) -> Result<Comparison> {
    let mut order: Vec<CellKey> = Vec::new();
    let mut grid: BTreeMap<CellKey, BTreeMap<Framework, BTreeMap<u64, f64>>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.split == split) {
        let fw: Framework = r.framework.parse()?;
        if !r.macro_f1.is_finite() {
            return Err(Error::Data(format!("non-finite macro_f1 for {}/{fw} seed {}", r.encoder, r.seed)));
        }
        let key = CellKey {
            encoder: r.encoder.clone(),
            pooling: r.pooling.clone(),
            label: r.label.clone(),
        };
        if !grid.contains_key(&key) {
            order.push(key.clone());
        }
        let seeds = grid.entry(key.clone()).or_default().entry(fw).or_default();
        if seeds.insert(r.seed, r.macro_f1).is_some() {
            return Err(Error::Data(format!("duplicate result for ({key}/{fw}, seed {})", r.seed)));
        }
    }
    if order.is_empty() {
        return Err(Error::Data(format!("no results for split `{split}`")));
    }

    let mut missing = Vec::new();
    for key in &order {
        let cell = &grid[key];
        let all: BTreeSet<u64> = cell.values().flat_map(|s| s.keys().copied()).collect();
        for (fw, seeds) in cell {
            for s in all.iter().filter(|s| !seeds.contains_key(s)) {
                missing.push(format!("({key}/{fw}, seed {s})"));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Alignment(missing));
    }

    let mut rows = Vec::new();
    let mut series = Vec::new();
    let mut warnings = Vec::new();
    for key in order {
        let cell = &grid[&key];
        let vec_of = |fw: Framework| cell.get(&fw).map(|s| s.values().copied().collect::<Vec<f64>>());
        let n_seeds = cell.values().next().map_or(0, |s| s.len());
        let dat = vec_of(Framework::RlmilDat);
        let mut test_against = |other: Framework| -> Result<Option<PairedTTest>> {
            let (Some(d), Some(o)) = (&dat, vec_of(other)) else {
                warnings.push(format!("{key}: rlmil_dat vs {other} skipped, framework missing"));
                return Ok(None);
            };
            if n_seeds < 2 {
                warnings.push(format!("{key}: rlmil_dat vs {other} skipped, needs at least 2 seeds"));
                return Ok(None);
            }
            let diffs: Vec<f64> = d.iter().zip(&o).map(|(a, b)| a - b).collect();
            match normality_check(&diffs) {
                Normality::Pass { .. } => {}
                other_result => warnings.push(format!("{key}: rlmil_dat vs {other}: {other_result}")),
            }
            paired_t_test(d, &o).map(Some)
        };
        let vs_mil = test_against(Framework::Mil)?;
        let vs_rlmil = test_against(Framework::Rlmil)?;
        for fw in Framework::ALL {
            if let Some(scores) = cell.get(&fw) {
                series.push(SeedScores {
                    cell: key.clone(),
                    framework: fw,
                    scores: scores.clone(),
                });
            }
        }
        rows.push(ComparisonRow {
            mil: vec_of(Framework::Mil).map(|v| mean(&v)),
            rlmil: vec_of(Framework::Rlmil).map(|v| mean(&v)),
            rlmil_dat: dat.as_ref().map(|v| mean(v)),
            cell: key,
            vs_mil,
            vs_rlmil,
            n_seeds,
        });
    }
    Ok(Comparison { rows, series, warnings })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn stat_fields(t: &Option<PairedTTest>) -> [String; 3] {
    match t {
        Some(t) => [t.mean_diff.to_string(), t.ci95.to_string(), t.p_value.to_string()],
        None => Default::default(),
    }
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COMPARISON_HEADER)?;
    for r in rows {
        let mut rec = vec![
            r.cell.encoder.clone(),
            r.cell.pooling.clone(),
            r.cell.label.clone(),
            opt(r.mil),
            opt(r.rlmil),
            opt(r.rlmil_dat),
        ];
        rec.extend(stat_fields(&r.vs_mil));
        rec.extend(stat_fields(&r.vs_rlmil));
        rec.push(r.n_seeds.to_string());
        w.write_record(&rec)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("csv is utf-8"))
}

/// Fixed-width rendering with three decimals.
pub fn render_table(rows: &[ComparisonRow]) -> String {
    let f3 = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
    let mut lines: Vec<Vec<String>> = vec![COMPARISON_HEADER.iter().map(|s| s.to_string()).collect()];
    for r in rows {
        let mut line = vec![
            r.cell.encoder.clone(),
            r.cell.pooling.clone(),
            r.cell.label.clone(),
            f3(r.mil),
            f3(r.rlmil),
            f3(r.rlmil_dat),
        ];
        for t in [&r.vs_mil, &r.vs_rlmil] {
            line.push(f3(t.map(|t| t.mean_diff)));
            line.push(f3(t.map(|t| t.ci95)));
            line.push(f3(t.map(|t| t.p_value)));
        }
        line.push(r.n_seeds.to_string());
        lines.push(line);
    }
    let widths: Vec<usize> = (0..COMPARISON_HEADER.len())
        .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, line) in lines.iter().enumerate() {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, w))| if c < 3 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        }
    }
    out
}

/// Long-format per-seed scores for box plots.
pub fn boxplot_csv(series: &[SeedScores]) -> String {
    let mut out = String::from("encoder,pooling,label,framework,seed,macro_f1\n");
    for s in series {
        for (seed, v) in &s.scores {
            let _ = writeln!(out, "{},{},{},{},{seed},{v}", s.cell.encoder, s.cell.pooling, s.cell.label, s.framework);
        }
    }
    out
}

/// Mean and sample sd per (cell, framework) for bar charts.
pub fn barchart_csv(series: &[SeedScores]) -> String {
    let mut out = String::from("encoder,pooling,label,framework,mean,sd\n");
    for s in series {
        let v: Vec<f64> = s.scores.values().copied().collect();
        let sd = if v.len() > 1 { sample_sd(&v).to_string() } else { String::new() };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{sd}",
            s.cell.encoder,
            s.cell.pooling,
            s.cell.label,
            s.framework,
            mean(&v)
        );
    }
    out
}
