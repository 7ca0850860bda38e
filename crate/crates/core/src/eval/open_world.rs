//! Open-world set verification: is a query one of a few target people?

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;

use super::cmc::sig9;
use super::scores::ScoreMatrix;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpenWorldPoint {
    pub threshold: f64,
    /// Fraction of target queries verified as a target.
    pub ttr: f64,
    /// Fraction of non-target queries wrongly verified as a target.
    pub ftr: f64,
}

/// Each query's verification statistic: its best score over the target gallery
/// columns. Returns (target-query statistics, non-target-query statistics).
pub fn verification_scores(m: &ScoreMatrix, targets: &[u32]) -> Result<(Vec<f64>, Vec<f64>)> {
    let targets: BTreeSet<u32> = targets.iter().copied().collect();
    let gallery_ids: BTreeSet<u32> = m.gallery().iter().map(|k| k.identity).collect();
    if let Some(t) = targets.iter().find(|t| !gallery_ids.contains(t)) {
        return Err(Error::Scores(format!("target identity {t} is not in the gallery")));
    }
    let cols: Vec<usize> = (0..m.gallery().len())
        .filter(|&j| targets.contains(&m.gallery()[j].identity))
        .collect();
    if cols.is_empty() {
        return Err(Error::Scores("no target identities given".into()));
    }
    let (mut tq, mut ntq) = (Vec::new(), Vec::new());
    for (i, p) in m.probes().iter().enumerate() {
        let row = m.row(i);
        let best = cols.iter().map(|&j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        if targets.contains(&p.identity) {
            tq.push(best);
        } else {
            ntq.push(best);
        }
    }
    if tq.is_empty() || ntq.is_empty() {
        return Err(Error::Scores(format!(
            "open-world rates need target and non-target queries (got {} and {})",
            tq.len(),
            ntq.len()
        )));
    }
    Ok((tq, ntq))
}

/// TTR and FTR at each threshold, a query counting as verified when its
/// statistic is `≥ s`. Without explicit thresholds the grid is every observed
/// statistic plus `−∞` and `+∞`, sorted ascending.
pub fn open_world_sweep(m: &ScoreMatrix, targets: &[u32], thresholds: Option<&[f64]>) -> Result<Vec<OpenWorldPoint>> {
    let (tq, ntq) = verification_scores(m, targets)?;
    let mut grid: Vec<f64> = match thresholds {
        Some(t) => {
            if t.iter().any(|v| v.is_nan()) {
                return Err(Error::invalid("NaN threshold"));
            }
            t.to_vec()
        }
        None => tq
            .iter()
            .chain(&ntq)
            .copied()
            .chain([f64::NEG_INFINITY, f64::INFINITY])
            .collect(),
    };
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut tq_sorted = tq;
    let mut ntq_sorted = ntq;
    tq_sorted.sort_by(f64::total_cmp);
    ntq_sorted.sort_by(f64::total_cmp);
    // Fraction of sorted values that are ≥ s.
    let at_least = |v: &[f64], s: f64| (v.len() - v.partition_point(|&x| x < s)) as f64 / v.len() as f64;
    Ok(grid
        .into_iter()
        .map(|s| OpenWorldPoint {
            threshold: s,
            ttr: at_least(&tq_sorted, s),
            ftr: at_least(&ntq_sorted, s),
        })
        .collect())
}

const TARGET_STREAM: u64 = 0x7467_7473;

/// Draws `p` distinct target identities from the gallery, sorted.
pub fn pick_targets(m: &ScoreMatrix, p: usize, seed: u64) -> Result<Vec<u32>> {
    let ids: Vec<u32> = m
        .gallery()
        .iter()
        .map(|k| k.identity)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if p == 0 || p >= ids.len() {
        return Err(Error::invalid(format!(
            "need 0 < targets < {} gallery identities, got {p}",
            ids.len()
        )));
    }
    let mut rng = seed::rng(seed, &[TARGET_STREAM]);
    let mut picked: Vec<u32> = index::sample(&mut rng, ids.len(), p).into_iter().map(|i| ids[i]).collect();
    picked.sort_unstable();
    Ok(picked)
}

/// `threshold,ttr,ftr` rows; infinite thresholds print as `-inf` / `inf`.
pub fn write_open_world_csv(points: &[OpenWorldPoint], path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::from("threshold,ttr,ftr\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", sig9(p.threshold), sig9(p.ttr), sig9(p.ftr));
    }
    std::fs::write(path, s)?;
    Ok(())
}
