//! Fully connected layer: `y = W·x + b` over the flattened input.

use super::linalg::{dot, gemm_tn};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone)]
pub struct FcCache<T> {
    input: Tensor<T>,
    relu_output: Option<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct FcGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

fn check<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize)> {
    if weight.rank() != 2 {
        return Err(Error::shape(
            "fully_connected",
            format!("weight must be [out, in], got {:?}", weight.shape()),
        ));
    }
    let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
    if input.len() != in_dim {
        return Err(Error::shape(
            "fully_connected",
            format!("input has {} elements, weight expects {in_dim}", input.len()),
        ));
    }
    if bias.shape() != [out_dim] {
        return Err(Error::shape(
            "fully_connected",
            format!("bias {:?} does not match output dim {out_dim}", bias.shape()),
        ));
    }
    Ok((out_dim, in_dim))
}

pub fn fully_connected<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    with_relu: bool,
) -> Result<(Tensor<T>, FcCache<T>)> {
    let (out_dim, in_dim) = check(input, weight, bias)?;
    let x = input.data();
    let w = weight.data();
    let mut out: Vec<T> = (0..out_dim)
        .map(|o| bias.data()[o] + dot(&w[o * in_dim..(o + 1) * in_dim], x))
        .collect();
    let relu_output = with_relu.then(|| {
        out.iter_mut().for_each(|v| {
            if *v < T::zero() {
                *v = T::zero()
            }
        });
        out.clone()
    });
    Ok((
        Tensor::from_vec(&[out_dim], out)?,
        FcCache {
            input: input.clone(),
            relu_output,
        },
    ))
}

/// Exact adjoint of [`fully_connected`]; `grad_input` has the original input shape.
pub fn fc_backward<T: Real>(
    cache: &FcCache<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<FcGrads<T>> {
    let out_dim = weight.shape()[0];
    let in_dim = cache.input.len();
    if grad_out.len() != out_dim || weight.shape() != [out_dim, in_dim] {
        return Err(Error::shape(
            "fc_backward",
            format!(
                "grad_out {:?} / weight {:?} inconsistent with input of {in_dim}",
                grad_out.shape(),
                weight.shape()
            ),
        ));
    }
    let mut g = grad_out.data().to_vec();
    if let Some(out) = &cache.relu_output {
        for (gi, &o) in g.iter_mut().zip(out) {
            if o <= T::zero() {
                *gi = T::zero();
            }
        }
    }
    let x = cache.input.data();
    let mut gw = vec![T::zero(); out_dim * in_dim];
    for (o, row) in gw.chunks_mut(in_dim).enumerate() {
        let go = g[o];
        if go != T::zero() {
            for (r, &xi) in row.iter_mut().zip(x) {
                *r = go * xi;
            }
        }
    }
    let mut gin = vec![T::zero(); in_dim];
    gemm_tn(weight.data(), &g, &mut gin, in_dim, out_dim, 1);
    Ok(FcGrads {
        input: Tensor::from_vec(cache.input.shape(), gin)?,
        weight: Tensor::from_vec(&[out_dim, in_dim], gw)?,
        bias: Tensor::from_vec(&[out_dim], g)?,
    })
}
