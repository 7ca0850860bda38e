//! Ranking-unit sampling with a reference-set curriculum.

use std::collections::HashSet;
use std::fmt;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::image::PersonImage;
use crate::error::{Error, Result};
use crate::seed;

/// Reference-set sizes allowed by the curriculum.
pub const REFERENCE_SIZES: [usize; 3] = [1, 2, 4];

/// A probe, its cross-view true match, and mismatched references. Fields index
/// into the training set the unit was built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankingUnit {
    pub probe: usize,
    pub positive: usize,
    pub references: Vec<usize>,
}

impl RankingUnit {
    /// Pairs scored for this unit: the positive followed by each reference.
    pub fn pair_count(&self) -> usize {
        1 + self.references.len()
    }
}

/// Epoch thresholds mapped to reference-set sizes, e.g. `0:1,10:2,20:4`.
/// Epochs are zero-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Curriculum {
    stages: Vec<(usize, usize)>,
}

impl Curriculum {
    pub fn new(stages: Vec<(usize, usize)>) -> Result<Self> {
        if stages.first().map(|s| s.0) != Some(0) {
            return Err(Error::invalid("curriculum must start at epoch 0"));
        }
        for w in stages.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::invalid("curriculum thresholds must be strictly increasing"));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::invalid("curriculum sizes must be non-decreasing"));
            }
        }
        if let Some(&(_, s)) = stages.iter().find(|(_, s)| !REFERENCE_SIZES.contains(s)) {
            return Err(Error::invalid(format!("reference-set size {s} not in {{1, 2, 4}}")));
        }
        Ok(Curriculum { stages })
    }

    pub fn constant(size: usize) -> Result<Self> {
        Self::new(vec![(0, size)])
    }

    /// `1 → 2 → 4` at thirds of the total epoch budget.
    pub fn thirds(epochs: usize) -> Self {
        let mut stages = vec![(0, 1)];
        for (t, s) in [(epochs / 3, 2), (2 * epochs / 3, 4)] {
            match stages.last_mut() {
                Some(last) if last.0 == t => last.1 = s,
                _ => stages.push((t, s)),
            }
        }
        Curriculum { stages }
    }

    pub fn size_at(&self, epoch: usize) -> usize {
        self.stages
            .iter()
            .take_while(|(t, _)| *t <= epoch)
            .last()
            .map(|s| s.1)
            .unwrap_or(self.stages[0].1)
    }

    pub fn max_size(&self) -> usize {
        self.stages.last().map(|s| s.1).unwrap_or(1)
    }

    pub fn stages(&self) -> &[(usize, usize)] {
        &self.stages
    }
}

impl fmt::Display for Curriculum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.stages.iter().map(|(t, s)| format!("{t}:{s}")).collect();
        f.write_str(&parts.join(","))
    }
}

impl std::str::FromStr for Curriculum {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let stages = s
            .split(',')
            .map(|part| {
                let (t, n) = part
                    .trim()
                    .split_once(':')
                    .ok_or_else(|| Error::invalid(format!("curriculum stage `{part}` is not epoch:size")))?;
                let parse = |v: &str| {
                    v.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::invalid(format!("bad curriculum number `{v}`")))
                };
                Ok((parse(t)?, parse(n)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Curriculum::new(stages)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerPolicy {
    /// Draw references from every camera instead of only the cameras other than the probe's.
    pub cross_view_relaxed: bool,
    pub curriculum: Curriculum,
    pub seed: u64,
}

/// Images that may serve as the probe's true match: same identity, other camera.
pub fn positive_candidates(set: &[PersonImage], probe: usize) -> Vec<usize> {
    let p = &set[probe];
    (0..set.len())
        .filter(|&i| set[i].identity() == p.identity() && set[i].camera() != p.camera())
        .collect()
}

/// The mismatch pool a probe's references are drawn from.
pub fn reference_candidates(set: &[PersonImage], probe: usize, relaxed: bool) -> Vec<usize> {
    let p = &set[probe];
    (0..set.len())
        .filter(|&i| set[i].identity() != p.identity() && (relaxed || set[i].camera() != p.camera()))
        .collect()
}

const UNIT_STREAM: u64 = 0x756e_6974;

/// Ranking units for one epoch. Every image with a cross-view match serves as a
/// probe once; the stream is shuffled and is a pure function of
/// `(set, epoch, policy)`.
pub fn build_units(set: &[PersonImage], epoch: usize, policy: &SamplerPolicy) -> Result<Vec<RankingUnit>> {
    let size = policy.curriculum.size_at(epoch);
    let identities: HashSet<u32> = set.iter().map(PersonImage::identity).collect();
    if identities.len() < size + 1 {
        return Err(Error::Dataset(format!(
            "{} identities cannot fill reference sets of size {size}",
            identities.len()
        )));
    }
    let mut rng = seed::rng(policy.seed, &[UNIT_STREAM, epoch as u64]);
    let mut units = Vec::with_capacity(set.len());
    for probe in 0..set.len() {
        let positives = positive_candidates(set, probe);
        if positives.is_empty() {
            continue;
        }
        let pool = reference_candidates(set, probe, policy.cross_view_relaxed);
        if pool.len() < size {
            return Err(Error::Dataset(format!(
                "probe {} has {} candidate references, needs {size}",
                set[probe].key,
                pool.len()
            )));
        }
        let positive = positives[rng.random_range(0..positives.len())];
        let references = index::sample(&mut rng, pool.len(), size)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        units.push(RankingUnit {
            probe,
            positive,
            references,
        });
    }
    if units.is_empty() {
        return Err(Error::Dataset("no image has a cross-view true match".into()));
    }
    units.shuffle(&mut rng);
    Ok(units)
}

/// Consecutive groups of `batch_units`; the last batch may be short.
pub fn make_minibatches(units: &[RankingUnit], batch_units: usize) -> Result<Vec<&[RankingUnit]>> {
    if batch_units == 0 {
        return Err(Error::invalid("batch_units must be at least 1"));
    }
    Ok(units.chunks(batch_units).collect())
}
