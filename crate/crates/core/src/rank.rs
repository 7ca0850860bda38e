//! Ranking objective over a ranking unit.
//!
//! A unit holds the score of the true-match pair `f(x, x⁺)` and the scores of
//! the sampled mismatches `f(x, y)`, `y ∈ R_x`. The loss replaces the 0-1 rank
//! indicator `I{z < 0}` with the base-2 logistic surrogate
//!
//! ```text
//! σ(z) = log₂(1 + 2^(−z))
//! L    = Σ_y σ(f(x, x⁺) − f(x, y))
//! ```
//!
//! Everything is base 2. The derivative of `σ` is `−2^(−z)/(1 + 2^(−z))` with no
//! `ln 2` factor, so the per-score gradients are
//!
//! ```text
//! ∂L/∂f(x, y)  =  δ/(1 + δ),   δ = 2^(f(x, y) − f(x, x⁺))
//! ∂L/∂f(x, x⁺) = −Σ_y ∂L/∂f(x, y)
//! ```

use crate::error::{Error, Result};

/// Scores produced by the network for one ranking unit.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitScores {
    pub positive: f64,
    pub negatives: Vec<f64>,
}

impl UnitScores {
    pub fn new(positive: f64, negatives: Vec<f64>) -> Result<Self> {
        let s = UnitScores { positive, negatives };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if self.negatives.is_empty() {
            return Err(Error::invalid("a ranking unit needs at least one negative score"));
        }
        if !self.positive.is_finite() || self.negatives.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("unit scores".into()));
        }
        Ok(())
    }
}

/// `∂L/∂f` for each pair of a unit, aligned with [`UnitScores`].
#[derive(Debug, Clone, PartialEq)]
pub struct UnitGrads {
    pub positive: f64,
    pub negatives: Vec<f64>,
}

fn finite(z: f64, what: &str) -> Result<f64> {
    if z.is_finite() {
        Ok(z)
    } else {
        Err(Error::NonFinite(format!("{what} argument {z}")))
    }
}

/// `log₂(1 + 2^(−z))`, evaluated without overflow for any finite `z`.
pub fn surrogate_sigma(z: f64) -> Result<f64> {
    let z = finite(z, "surrogate_sigma")?;
    Ok(if z >= 0.0 {
        (-z).exp2().ln_1p() * std::f64::consts::LOG2_E
    } else {
        -z + z.exp2().ln_1p() * std::f64::consts::LOG2_E
    })
}

/// `1/(1 + 2^(−d))`, i.e. `δ/(1 + δ)` for `δ = 2^d`. Saturates to exactly 0 or 1.
pub fn stable_delta_ratio(d: f64) -> Result<f64> {
    let d = finite(d, "stable_delta_ratio")?;
    Ok(if d >= 0.0 {
        1.0 / (1.0 + (-d).exp2())
    } else {
        let e = d.exp2();
        e / (1.0 + e)
    })
}

/// Number of gallery scores strictly above the true-match score. Ties do not count.
pub fn zero_one_rank(positive: f64, gallery: &[f64]) -> usize {
    gallery.iter().filter(|&&g| positive - g < 0.0).count()
}

pub fn unit_loss(s: &UnitScores) -> Result<f64> {
    s.validate()?;
    s.negatives
        .iter()
        .map(|&n| surrogate_sigma(s.positive - n))
        .sum()
}

pub fn unit_grad(s: &UnitScores) -> Result<UnitGrads> {
    s.validate()?;
    let negatives = s
        .negatives
        .iter()
        .map(|&n| stable_delta_ratio(n - s.positive))
        .collect::<Result<Vec<_>>>()?;
    let positive = -negatives.iter().sum::<f64>();
    Ok(UnitGrads { positive, negatives })
}

/// Sum of unit losses over a minibatch.
pub fn batch_loss(units: &[UnitScores]) -> Result<f64> {
    if units.is_empty() {
        return Err(Error::invalid("batch_loss needs at least one unit"));
    }
    units.iter().map(unit_loss).sum()
}
