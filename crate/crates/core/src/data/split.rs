//! Stratified train / validation / test partitioning.
//!
//! Split totals are the largest-remainder rounding of `n * ratio`. Per-class
//! cell counts are a controlled rounding of `n_class * ratio`: every cell is
//! the floor or floor + 1 of its exact quota, rows sum to the class size and
//! columns sum to the split totals. Units are placed largest fraction first,
//! with augmenting paths resolving conflicts.

use std::collections::VecDeque;
use std::str::FromStr;

use rand::seq::SliceRandom;

use super::bags::SpeakerBag;
use super::LabelKind;
use crate::error::{Error, Result};
use crate::nn::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const DEFAULT: SplitRatios = SplitRatios {
        train: 0.8,
        validation: 0.1,
        test: 0.1,
    };

    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self> {
        let r = SplitRatios { train, validation, test };
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> Result<()> {
        let parts = self.as_array();
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must be in [0,1] and sum to 1, got {parts:?}")));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.validation, self.test]
    }
}

impl FromStr for SplitRatios {
    type Err = Error;

    /// Parses `"0.8,0.1,0.1"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("cannot parse ratios `{s}`")))?;
        if parts.len() != 3 {
            return Err(Error::Config(format!("expected three ratios, got `{s}`")));
        }
        SplitRatios::new(parts[0], parts[1], parts[2])
    }
}

pub type StratKey = LabelKind;

/// Largest-remainder apportionment of `n` over `weights` (summing to 1).
/// Ties go to the earlier index.
pub fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| n as f64 * w).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Controlled rounding of `class_sizes[c] * ratios[s]` to integers with the
/// given column totals.
pub fn allocate_cells(class_sizes: &[usize], ratios: &[f64], totals: &[usize]) -> Vec<Vec<usize>> {
    let nc = class_sizes.len();
    let ns = ratios.len();
    let quota = |c: usize, s: usize| class_sizes[c] as f64 * ratios[s];
    let mut cells: Vec<Vec<usize>> = (0..nc)
        .map(|c| (0..ns).map(|s| quota(c, s).floor() as usize).collect())
        .collect();
    let mut row_need: Vec<usize> = (0..nc).map(|c| class_sizes[c] - cells[c].iter().sum::<usize>()).collect();
    let mut col_need: Vec<isize> = (0..ns)
        .map(|s| totals[s] as isize - (0..nc).map(|c| cells[c][s]).sum::<usize>() as isize)
        .collect();
    let mut bumped = vec![vec![false; ns]; nc];

    let mut candidates: Vec<(usize, usize)> = (0..nc).flat_map(|c| (0..ns).map(move |s| (c, s))).collect();
    candidates.sort_by(|&(c1, s1), &(c2, s2)| {
        let f1 = quota(c1, s1) - quota(c1, s1).floor();
        let f2 = quota(c2, s2) - quota(c2, s2).floor();
        f2.partial_cmp(&f1).unwrap().then((c1, s1).cmp(&(c2, s2)))
    });
    for &(c, s) in &candidates {
        if row_need[c] > 0 && col_need[s] > 0 && !bumped[c][s] {
            bumped[c][s] = true;
            row_need[c] -= 1;
            col_need[s] -= 1;
        }
    }

    // Greedy placement can strand a unit; reroute along alternating paths.
    while let Some(start) = (0..nc).find(|&c| row_need[c] > 0) {
        // BFS over rows; parent links record (row, via column).
        let mut prev_row: Vec<Option<(usize, usize)>> = vec![None; nc];
        let mut seen_row = vec![false; nc];
        let mut seen_col = vec![false; ns];
        let mut queue = VecDeque::from([start]);
        seen_row[start] = true;
        let mut found: Option<(usize, usize)> = None;
        'search: while let Some(c) = queue.pop_front() {
            for s in 0..ns {
                if bumped[c][s] || seen_col[s] {
                    continue;
                }
                seen_col[s] = true;
                if col_need[s] > 0 {
                    found = Some((c, s));
                    break 'search;
                }
                for c2 in 0..nc {
                    if bumped[c2][s] && !seen_row[c2] {
                        seen_row[c2] = true;
                        prev_row[c2] = Some((c, s));
                        queue.push_back(c2);
                    }
                }
            }
        }
        let (mut c, s) = found.expect("a controlled rounding always exists");
        bumped[c][s] = true;
        col_need[s] -= 1;
        while let Some((pc, ps)) = prev_row[c] {
            // Move row c's unit out of column ps, give ps to row pc.
            bumped[c][ps] = false;
            bumped[pc][ps] = true;
            c = pc;
        }
        row_need[start] -= 1;
    }

    for c in 0..nc {
        for s in 0..ns {
            if bumped[c][s] {
                cells[c][s] += 1;
            }
        }
    }
    cells
}

/// Splits bags into train / validation / test, stratified by `key`.
///
/// Fails with [`Error::PoolSize`] when validation or test would hold fewer
/// than `pool_size` bags.
pub fn stratified_split(
    bags: Vec<SpeakerBag>,
    ratios: SplitRatios,
    key: StratKey,
    num_classes: usize,
    pool_size: usize,
    seed: u64,
) -> Result<[Vec<SpeakerBag>; 3]> {
    ratios.validate()?;
    let weights = ratios.as_array();
    let totals = apportion(bags.len(), &weights);
    if totals[1] < pool_size || totals[2] < pool_size {
        return Err(Error::PoolSize(format!(
            "validation ({}) and test ({}) must each hold at least pool_size = {pool_size} bags; {} bags at ratios {:?}",
            totals[1],
            totals[2],
            bags.len(),
            weights
        )));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, b) in bags.iter().enumerate() {
        let c = b.label(key);
        if c >= num_classes {
            return Err(Error::Data(format!("bag `{}` has class {c} >= {num_classes}", b.speaker_id)));
        }
        members[c].push(i);
    }
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let cells = allocate_cells(&sizes, &weights, &totals);

    let mut rng = stream_rng(seed, Stream::Split);
    let mut assignment = vec![0usize; bags.len()];
    for (c, idx) in members.iter_mut().enumerate() {
        idx.shuffle(&mut rng);
        let mut it = idx.iter();
        for (s, &count) in cells[c].iter().enumerate() {
            for &i in it.by_ref().take(count) {
                assignment[i] = s;
            }
        }
    }
    let mut parts: [Vec<SpeakerBag>; 3] = Default::default();
    for (bag, s) in bags.into_iter().zip(assignment) {
        parts[s].push(bag);
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apportion_documented_cases() {
        assert_eq!(apportion(100, &[0.8, 0.1, 0.1]), vec![80, 10, 10]);
        assert_eq!(apportion(93, &[0.7, 0.15, 0.15]), vec![65, 14, 14]);
        assert_eq!(apportion(527, &[0.8, 0.1, 0.1]), vec![421, 53, 53]);
    }

    #[test]
    fn cells_respect_rows_columns_and_quotas() {
        let sizes = [7, 13, 1, 29, 0, 43];
        let ratios = [0.7, 0.15, 0.15];
        let n: usize = sizes.iter().sum();
        let totals = apportion(n, &ratios);
        let cells = allocate_cells(&sizes, &ratios, &totals);
        for (c, row) in cells.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), sizes[c]);
            for (s, &v) in row.iter().enumerate() {
                let q = sizes[c] as f64 * ratios[s];
                assert!((v as f64 - q).abs() < 1.0 + 1e-9, "cell ({c},{s}) = {v}, quota {q}");
            }
        }
        for s in 0..3 {
            assert_eq!(cells.iter().map(|r| r[s]).sum::<usize>(), totals[s]);
        }
    }

    #[test]
    fn parses_ratios() {
        let r: SplitRatios = "0.7, 0.15, 0.15".parse().unwrap();
        assert_eq!(r.as_array(), [0.7, 0.15, 0.15]);
        assert!("0.5,0.5".parse::<SplitRatios>().is_err());
        assert!("0.5,0.5,0.5".parse::<SplitRatios>().is_err());
    }
}
