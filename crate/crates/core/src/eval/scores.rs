//! Probe × gallery score matrices: computing, exchanging, aggregating, fusing.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::image::{ImageKey, PersonImage};
use crate::data::stitch::{central_crop, join_halves, resize_half, tta_from_canonical};
use crate::error::{Error, Result};
use crate::net::Network;
use crate::tensor::{Real, Tensor};

/// Similarity of every probe (row) to every gallery image (column), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    probes: Vec<ImageKey>,
    gallery: Vec<ImageKey>,
    values: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(probes: Vec<ImageKey>, gallery: Vec<ImageKey>, values: Vec<f64>) -> Result<Self> {
        if probes.is_empty() || gallery.is_empty() {
            return Err(Error::Scores("score matrix needs at least one probe and one gallery entry".into()));
        }
        if values.len() != probes.len() * gallery.len() {
            return Err(Error::Scores(format!(
                "{} values for {} probes x {} gallery",
                values.len(),
                probes.len(),
                gallery.len()
            )));
        }
        for (axis, labels) in [("probe", &probes), ("gallery", &gallery)] {
            let mut seen = HashSet::new();
            if let Some(dup) = labels.iter().find(|k| !seen.insert(*k)) {
                return Err(Error::Scores(format!("duplicate {axis} label {dup}")));
            }
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "score for probe {} and gallery {}",
                probes[i / gallery.len()],
                gallery[i % gallery.len()]
            )));
        }
        Ok(ScoreMatrix {
            probes,
            gallery,
            values,
        })
    }

    pub fn probes(&self) -> &[ImageKey] {
        &self.probes
    }

    pub fn gallery(&self) -> &[ImageKey] {
        &self.gallery
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, probe: usize) -> &[f64] {
        let g = self.gallery.len();
        &self.values[probe * g..(probe + 1) * g]
    }

    pub fn get(&self, probe: usize, gallery: usize) -> f64 {
        self.values[probe * self.gallery.len() + gallery]
    }

    /// The same matrix restricted to the given gallery columns, in that order.
    pub fn select_gallery(&self, columns: &[usize]) -> Result<ScoreMatrix> {
        let values = (0..self.probes.len())
            .flat_map(|i| columns.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        ScoreMatrix::new(
            self.probes.clone(),
            columns.iter().map(|&j| self.gallery[j].clone()).collect(),
            values,
        )
    }

    /// Rows restricted to the given probes, in that order.
    pub fn select_probes(&self, rows: &[usize]) -> Result<ScoreMatrix> {
        let values = rows.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        ScoreMatrix::new(
            rows.iter().map(|&i| self.probes[i].clone()).collect(),
            self.gallery.clone(),
            values,
        )
    }

    /// CSV with gallery labels in the first row and probe labels in the first
    /// column. Scores are written in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("probe");
        for g in &self.gallery {
            let _ = write!(s, ",{g}");
        }
        s.push('\n');
        for (i, p) in self.probes.iter().enumerate() {
            let _ = write!(s, "{p}");
            for v in self.row(i) {
                let _ = write!(s, ",{v:?}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Scores("empty score CSV".into()))?;
        let gallery = header
            .split(',')
            .skip(1)
            .map(ImageKey::from_str)
            .collect::<Result<Vec<_>>>()?;
        let mut probes = Vec::new();
        let mut values = Vec::new();
        for (n, line) in lines.enumerate() {
            let mut cells = line.split(',');
            let label = cells.next().unwrap_or_default();
            probes.push(label.parse()?);
            let row: Vec<f64> = cells
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Scores(format!("row {}: bad score `{c}`", n + 2)))
                })
                .collect::<Result<_>>()?;
            if row.len() != gallery.len() {
                return Err(Error::Scores(format!(
                    "row {} has {} scores, header has {} gallery labels",
                    n + 2,
                    row.len(),
                    gallery.len()
                )));
            }
            values.extend(row);
        }
        ScoreMatrix::new(probes, gallery, values)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Infer-mode scores of every (probe, gallery) pair, the probe on the left.
/// With `use_tta` each cell is the mean over the 8 flip/swap variants.
pub fn score_matrix<T: Real>(
    net: &Network<T>,
    probes: &[PersonImage],
    gallery: &[PersonImage],
    use_tta: bool,
) -> Result<ScoreMatrix> {
    if probes.is_empty() || gallery.is_empty() {
        return Err(Error::invalid("score_matrix needs non-empty probe and gallery sets"));
    }
    let side = net.config().stitch_side;
    let crop = net.config().input_side;
    let halves = |set: &[PersonImage]| -> Result<Vec<Tensor<f32>>> {
        set.par_iter().map(|img| resize_half(img, side)).collect()
    };
    let (ph, gh) = (halves(probes)?, halves(gallery)?);
    let g = gallery.len();
    let values = (0..probes.len() * g)
        .into_par_iter()
        .map(|cell| {
            let canonical = join_halves(&ph[cell / g], &gh[cell % g])?;
            if use_tta {
                let inputs = tta_from_canonical(&canonical, crop)?;
                let mut sum = 0.0;
                for x in &inputs {
                    sum += net.score(&x.cast::<T>())?.as_f64();
                }
                Ok(sum / inputs.len() as f64)
            } else {
                Ok(net.score(&central_crop(&canonical, crop)?.cast::<T>())?.as_f64())
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    ScoreMatrix::new(
        probes.iter().map(|p| p.key.clone()).collect(),
        gallery.iter().map(|p| p.key.clone()).collect(),
        values,
    )
}

/// Nearest-neighbour baseline on raw pixels: the negative root-mean-square
/// difference after resizing both images to `height × width`.
pub fn raw_pixel_scores(
    probes: &[PersonImage],
    gallery: &[PersonImage],
    height: usize,
    width: usize,
) -> Result<ScoreMatrix> {
    let resize = |set: &[PersonImage]| -> Result<Vec<Tensor<f32>>> {
        set.iter()
            .map(|img| crate::data::image::resize_bilinear(&img.pixels, height, width))
            .collect()
    };
    let (p, q) = (resize(probes)?, resize(gallery)?);
    let n = (3 * height * width) as f64;
    let mut values = Vec::with_capacity(p.len() * q.len());
    for a in &p {
        for b in &q {
            let ss: f64 = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| ((x - y) as f64).powi(2))
                .sum();
            values.push(-(ss / n).sqrt());
        }
    }
    ScoreMatrix::new(
        probes.iter().map(|p| p.key.clone()).collect(),
        gallery.iter().map(|p| p.key.clone()).collect(),
        values,
    )
}

/// How several gallery images of one identity collapse into one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregate {
    #[default]
    Max,
    Mean,
}

impl FromStr for Aggregate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Aggregate::Max),
            "mean" => Ok(Aggregate::Mean),
            other => Err(Error::invalid(format!("unknown aggregate `{other}` (expected max or mean)"))),
        }
    }
}

/// One column per gallery identity, ordered by identity. Each column is
/// labelled with the first gallery key of that identity.
pub fn multishot_aggregate(m: &ScoreMatrix, policy: Aggregate) -> Result<ScoreMatrix> {
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (j, k) in m.gallery.iter().enumerate() {
        groups.entry(k.identity).or_default().push(j);
    }
    let mut values = Vec::with_capacity(m.probes.len() * groups.len());
    for i in 0..m.probes.len() {
        let row = m.row(i);
        for cols in groups.values() {
            let v = match policy {
                Aggregate::Max => cols.iter().map(|&j| row[j]).fold(f64::NEG_INFINITY, f64::max),
                Aggregate::Mean => cols.iter().map(|&j| row[j]).sum::<f64>() / cols.len() as f64,
            };
            values.push(v);
        }
    }
    let gallery = groups.values().map(|cols| m.gallery[cols[0]].clone()).collect();
    ScoreMatrix::new(m.probes.clone(), gallery, values)
}

/// Per-matrix rescaling applied before fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    #[default]
    None,
    MinMax,
    ZScore,
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Normalization::None),
            "minmax" => Ok(Normalization::MinMax),
            "zscore" => Ok(Normalization::ZScore),
            other => Err(Error::invalid(format!(
                "unknown normalization `{other}` (expected none, minmax or zscore)"
            ))),
        }
    }
}

fn normalized(values: &[f64], norm: Normalization) -> Vec<f64> {
    let n = values.len() as f64;
    match norm {
        Normalization::None => values.to_vec(),
        Normalization::MinMax => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            values
                .iter()
                .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
                .collect()
        }
        Normalization::ZScore => {
            let mean = values.iter().sum::<f64>() / n;
            let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            values
                .iter()
                .map(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 })
                .collect()
        }
    }
}

/// Elementwise sum of two matrices over identical labels, after normalizing
/// each one.
pub fn fuse_scores(a: &ScoreMatrix, b: &ScoreMatrix, norm: Normalization) -> Result<ScoreMatrix> {
    if a.probes != b.probes || a.gallery != b.gallery {
        return Err(Error::Scores("cannot fuse score matrices with different probe or gallery labels".into()));
    }
    let (x, y) = (normalized(&a.values, norm), normalized(&b.values, norm));
    ScoreMatrix::new(
        a.probes.clone(),
        a.gallery.clone(),
        x.iter().zip(&y).map(|(p, q)| p + q).collect(),
    )
}
