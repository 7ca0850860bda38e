//! Local response normalization across channels.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrnParams {
    pub k: f64,
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        LrnParams {
            k: 2.0,
            n: 5,
            alpha: 1e-4,
            beta: 0.75,
        }
    }
}

impl LrnParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) {
            return Err(Error::invalid(format!("lrn k must be positive, got {}", self.k)));
        }
        if self.n == 0 || self.n % 2 == 0 {
            return Err(Error::invalid(format!("lrn n must be odd and positive, got {}", self.n)));
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::invalid("lrn alpha/beta must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LrnCache<T> {
    params: LrnParams,
    input: Tensor<T>,
    /// `k + alpha/n · Σ a²` per element.
    scale: Vec<T>,
}

fn channel_window(c: usize, n: usize, channels: usize) -> std::ops::RangeInclusive<usize> {
    let half = n / 2;
    c.saturating_sub(half)..=(c + half).min(channels - 1)
}

/// `b_c = a_c · (k + alpha/n · Σ_{c' ∈ window(c)} a_{c'}²)^(−beta)`
pub fn lrn<T: Real>(input: &Tensor<T>, params: LrnParams) -> Result<(Tensor<T>, LrnCache<T>)> {
    params.validate()?;
    if input.rank() != 3 {
        return Err(Error::shape(
            "lrn",
            format!("input must be [C, H, W], got {:?}", input.shape()),
        ));
    }
    let channels = input.shape()[0];
    let plane = input.shape()[1] * input.shape()[2];
    let k = T::from_f64_lossy(params.k);
    let coef = T::from_f64_lossy(params.alpha / params.n as f64);
    let neg_beta = T::from_f64_lossy(-params.beta);

    let x = input.data();
    let sq: Vec<T> = x.iter().map(|&v| v * v).collect();
    let mut scale = vec![T::zero(); x.len()];
    for c in 0..channels {
        let dst = &mut scale[c * plane..(c + 1) * plane];
        for src in channel_window(c, params.n, channels) {
            for (d, &s) in dst.iter_mut().zip(&sq[src * plane..(src + 1) * plane]) {
                *d += s;
            }
        }
        dst.iter_mut().for_each(|d| *d = k + coef * *d);
    }
    let out: Vec<T> = x
        .iter()
        .zip(&scale)
        .map(|(&a, &s)| a * s.powf(neg_beta))
        .collect();
    Ok((
        Tensor::from_vec(input.shape(), out)?,
        LrnCache {
            params,
            input: input.clone(),
            scale,
        },
    ))
}

pub fn lrn_backward<T: Real>(cache: &LrnCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != cache.input.shape() {
        return Err(Error::shape(
            "lrn_backward",
            format!("{:?} vs {:?}", grad_out.shape(), cache.input.shape()),
        ));
    }
    let p = cache.params;
    let channels = cache.input.shape()[0];
    let plane = cache.input.len() / channels;
    let neg_beta = T::from_f64_lossy(-p.beta);
    let neg_beta_m1 = T::from_f64_lossy(-p.beta - 1.0);
    let coef = T::from_f64_lossy(2.0 * p.alpha * p.beta / p.n as f64);

    let a = cache.input.data();
    let g = grad_out.data();
    // t_c = g_c · a_c · s_c^(−β−1)
    let t: Vec<T> = g
        .iter()
        .zip(a)
        .zip(&cache.scale)
        .map(|((&gi, &ai), &si)| gi * ai * si.powf(neg_beta_m1))
        .collect();

    let mut gin: Vec<T> = g
        .iter()
        .zip(&cache.scale)
        .map(|(&gi, &si)| gi * si.powf(neg_beta))
        .collect();
    // The window is symmetric, so channel j receives from every c whose window holds j.
    for j in 0..channels {
        for c in channel_window(j, p.n, channels) {
            let src = &t[c * plane..(c + 1) * plane];
            let aj = &a[j * plane..(j + 1) * plane];
            for ((d, &tc), &av) in gin[j * plane..(j + 1) * plane].iter_mut().zip(src).zip(aj) {
                *d -= coef * av * tc;
            }
        }
    }
    Tensor::from_vec(cache.input.shape(), gin)
}
