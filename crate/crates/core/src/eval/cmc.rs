//! Cumulative matching characteristic curves.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use super::scores::ScoreMatrix;
use crate::error::{Error, Result};
use crate::seed;

/// How gallery scores equal to the true match's score are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TiePolicy {
    /// Ties rank ahead of the true match.
    #[default]
    Pessimistic,
    /// Ties rank behind the true match.
    Optimistic,
}

/// `rates[k − 1]` is the fraction of probes whose true match ranks within the top `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CmcCurve {
    pub rates: Vec<f64>,
    /// Per-rank sample standard deviation over trials, when there was more than one.
    pub stddev: Option<Vec<f64>>,
}

impl CmcCurve {
    /// Match rate at rank `k` (1-based).
    pub fn rank(&self, k: usize) -> f64 {
        self.rates[k.clamp(1, self.rates.len()) - 1]
    }

    pub fn rank1(&self) -> f64 {
        self.rates[0]
    }

    /// `rank,rate[,stddev]` rows at 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(if self.stddev.is_some() { "rank,rate,stddev\n" } else { "rank,rate\n" });
        for (k, r) in self.rates.iter().enumerate() {
            let _ = write!(s, "{},{}", k + 1, sig9(*r));
            if let Some(sd) = &self.stddev {
                let _ = write!(s, ",{}", sig9(sd[k]));
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Scores("empty CMC CSV".into()))?;
        let with_sd = match header.trim() {
            "rank,rate" => false,
            "rank,rate,stddev" => true,
            other => return Err(Error::Scores(format!("unexpected CMC header `{other}`"))),
        };
        let (mut rates, mut sds) = (Vec::new(), Vec::new());
        for line in lines {
            let cells: Vec<&str> = line.split(',').collect();
            let num = |i: usize| -> Result<f64> {
                cells
                    .get(i)
                    .and_then(|c| c.trim().parse().ok())
                    .ok_or_else(|| Error::Scores(format!("bad CMC row `{line}`")))
            };
            rates.push(num(1)?);
            if with_sd {
                sds.push(num(2)?);
            }
        }
        Ok(CmcCurve {
            rates,
            stddev: with_sd.then_some(sds),
        })
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Rounds to 9 significant digits and prints the shortest form that reads back
/// to that value (`1.0`, `0.5`, `0.333333333`).
pub(crate) fn sig9(v: f64) -> String {
    let rounded: f64 = format!("{v:.8e}").parse().unwrap_or(v);
    format!("{rounded:?}")
}

/// The rank of each probe's true match among the gallery identities.
pub fn true_match_ranks(m: &ScoreMatrix, tie: TiePolicy) -> Result<Vec<usize>> {
    let mut column_of: HashMap<u32, usize> = HashMap::new();
    for (j, k) in m.gallery().iter().enumerate() {
        if column_of.insert(k.identity, j).is_some() {
            return Err(Error::Scores(format!(
                "gallery identity {} appears more than once; aggregate multi-shot galleries first",
                k.identity
            )));
        }
    }
    m.probes()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let t = *column_of.get(&p.identity).ok_or_else(|| {
                Error::Scores(format!("probe {p} has no true match in the gallery"))
            })?;
            let row = m.row(i);
            let truth = row[t];
            let above = row.iter().filter(|&&v| v > truth).count();
            let ties = match tie {
                TiePolicy::Pessimistic => row.iter().enumerate().filter(|&(j, &v)| j != t && v == truth).count(),
                TiePolicy::Optimistic => 0,
            };
            Ok(1 + above + ties)
        })
        .collect()
}

/// Single-trial CMC over a gallery holding exactly one column per identity.
pub fn cmc_from_scores(m: &ScoreMatrix, tie: TiePolicy) -> Result<CmcCurve> {
    let ranks = true_match_ranks(m, tie)?;
    let g = m.gallery().len();
    let mut hist = vec![0usize; g + 1];
    for r in ranks {
        hist[r] += 1;
    }
    let n = m.probes().len() as f64;
    let mut acc = 0usize;
    let rates = (1..=g)
        .map(|k| {
            acc += hist[k];
            acc as f64 / n
        })
        .collect();
    Ok(CmcCurve { rates, stddev: None })
}

const TRIAL_STREAM: u64 = 0x636d_6374;

/// Averages `trials` single-trial curves, each using one randomly chosen
/// gallery image per identity.
pub fn cmc_trials(m: &ScoreMatrix, trials: usize, tie: TiePolicy, seed: u64) -> Result<CmcCurve> {
    if trials == 0 {
        return Err(Error::invalid("cmc_trials needs at least one trial"));
    }
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (j, k) in m.gallery().iter().enumerate() {
        groups.entry(k.identity).or_default().push(j);
    }
    let curves = (0..trials)
        .map(|t| {
            let mut rng = seed::rng(seed, &[TRIAL_STREAM, t as u64]);
            let cols: Vec<usize> = groups
                .values()
                .map(|c| c[rng.random_range(0..c.len())])
                .collect();
            cmc_from_scores(&m.select_gallery(&cols)?, tie)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(average_curves(&curves))
}

/// Mean curve with per-rank sample standard deviation (omitted for one curve).
pub fn average_curves(curves: &[CmcCurve]) -> CmcCurve {
    let n = curves.len();
    let len = curves[0].rates.len();
    let mean: Vec<f64> = (0..len)
        .map(|k| curves.iter().map(|c| c.rates[k]).sum::<f64>() / n as f64)
        .collect();
    if n == 1 {
        return CmcCurve {
            rates: mean,
            stddev: None,
        };
    }
    let sd = (0..len)
        .map(|k| {
            let ss: f64 = curves.iter().map(|c| (c.rates[k] - mean[k]).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        })
        .collect();
    CmcCurve {
        rates: mean,
        stddev: Some(sd),
    }
}
