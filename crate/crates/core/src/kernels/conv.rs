//! 2-D convolution (cross-correlation, no kernel flip) with optional ReLU.

use super::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    /// `[out_channels, in_channels, kh, kw]`
    pub kernels: Tensor<T>,
    /// `[out_channels]`
    pub bias: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Real> ConvParams<T> {
    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn kernel_extent(&self) -> (usize, usize) {
        (self.kernels.shape()[2], self.kernels.shape()[3])
    }
}

/// Output extent of a strided window: `floor((input + 2·pad − window)/stride) + 1`.
pub fn conv_output_extent(input: usize, window: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || window == 0 || window > input + 2 * pad {
        return None;
    }
    Some((input + 2 * pad - window) / stride + 1)
}

#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    input_shape: [usize; 3],
    out_hw: (usize, usize),
    kernel_hw: (usize, usize),
    stride: usize,
    pad: usize,
    /// im2col matrix, `[cin·kh·kw, oh·ow]`
    columns: Vec<T>,
    /// Post-activation output when ReLU is applied, for gating.
    relu_output: Option<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

fn check_params<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize)> {
    if input.rank() != 3 {
        return Err(Error::shape(
            "conv2d",
            format!("input must be [C, H, W], got {:?}", input.shape()),
        ));
    }
    if kernels.rank() != 4 || bias.shape() != [kernels.shape()[0]] {
        return Err(Error::shape(
            "conv2d",
            format!(
                "kernels {:?} / bias {:?} are not [cout, cin, kh, kw] / [cout]",
                kernels.shape(),
                bias.shape()
            ),
        ));
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d stride must be positive"));
    }
    let [c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    if c != kernels.shape()[1] {
        return Err(Error::shape(
            "conv2d",
            format!("input has {c} channels, kernels expect {}", kernels.shape()[1]),
        ));
    }
    let (kh, kw) = (kernels.shape()[2], kernels.shape()[3]);
    match (
        conv_output_extent(h, kh, stride, pad),
        conv_output_extent(w, kw, stride, pad),
    ) {
        (Some(oh), Some(ow)) => Ok((oh, ow)),
        _ => Err(Error::shape(
            "conv2d",
            format!(
                "kernel {kh}x{kw} exceeds padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            ),
        )),
    }
}

fn im2col<T: Real>(
    input: &[T],
    [c, h, w]: [usize; 3],
    (kh, kw): (usize, usize),
    (oh, ow): (usize, usize),
    stride: usize,
    pad: usize,
) -> Vec<T> {
    let p = oh * ow;
    let mut cols = vec![T::zero(); c * kh * kw * p];
    for ch in 0..c {
        let plane = &input[ch * h * w..(ch + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((ch * kh + ki) * kw + kj) * p;
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut cols[row + oy * ow..row + (oy + 1) * ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(
    cols: &[T],
    [c, h, w]: [usize; 3],
    (kh, kw): (usize, usize),
    (oh, ow): (usize, usize),
    stride: usize,
    pad: usize,
) -> Vec<T> {
    let p = oh * ow;
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((ch * kh + ki) * kw + kj) * p;
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = ch * h * w + iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            out[base + ix as usize] += cols[row + oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Forward convolution of a `[C_in, H, W]` input.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    p: &ConvParams<T>,
    with_relu: bool,
) -> Result<(Tensor<T>, ConvCache<T>)> {
    conv2d_parts(input, &p.kernels, &p.bias, p.stride, p.pad, with_relu)
}

pub(crate) fn conv2d_parts<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
    with_relu: bool,
) -> Result<(Tensor<T>, ConvCache<T>)> {
    let (oh, ow) = check_params(input, kernels, bias, stride, pad)?;
    let shape = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let kernel_hw = (kernels.shape()[2], kernels.shape()[3]);
    let cout = kernels.shape()[0];
    let k = shape[0] * kernel_hw.0 * kernel_hw.1;
    let np = oh * ow;

    let columns = im2col(input.data(), shape, kernel_hw, (oh, ow), stride, pad);
    let mut out = vec![T::zero(); cout * np];
    for (o, row) in out.chunks_mut(np).enumerate() {
        row.fill(bias.data()[o]);
    }
    gemm_nn(kernels.data(), &columns, &mut out, cout, k, np);

    let relu_output = if with_relu {
        out.iter_mut().for_each(|x| {
            if *x < T::zero() {
                *x = T::zero()
            }
        });
        Some(out.clone())
    } else {
        None
    };

    let cache = ConvCache {
        input_shape: shape,
        out_hw: (oh, ow),
        kernel_hw,
        stride,
        pad,
        columns,
        relu_output,
    };
    Ok((Tensor::from_vec(&[cout, oh, ow], out)?, cache))
}

/// Exact adjoint of [`conv2d`]. `p` must be the parameters used in the forward pass.
pub fn conv2d_backward<T: Real>(
    cache: &ConvCache<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (g, gin) = conv2d_backward_parts(cache, &p.kernels, grad_out, true)?;
    Ok(ConvGrads {
        input: gin.expect("input gradient requested"),
        kernels: g.0,
        bias: g.1,
    })
}

type KernelBiasGrads<T> = (Tensor<T>, Tensor<T>);

/// Returns `((grad_kernels, grad_bias), grad_input)`; the input gradient is
/// skipped unless `need_input`.
pub(crate) fn conv2d_backward_parts<T: Real>(
    cache: &ConvCache<T>,
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<(KernelBiasGrads<T>, Option<Tensor<T>>)> {
    let cout = kernels.shape()[0];
    let (oh, ow) = cache.out_hw;
    if grad_out.shape() != [cout, oh, ow] {
        return Err(Error::shape(
            "conv2d_backward",
            format!(
                "grad_out {:?} does not match forward output {:?}",
                grad_out.shape(),
                [cout, oh, ow]
            ),
        ));
    }
    if (kernels.shape()[2], kernels.shape()[3]) != cache.kernel_hw
        || kernels.shape()[1] != cache.input_shape[0]
    {
        return Err(Error::shape(
            "conv2d_backward",
            "parameters differ from the forward pass",
        ));
    }
    let np = oh * ow;
    let k = cache.input_shape[0] * cache.kernel_hw.0 * cache.kernel_hw.1;

    let mut g = grad_out.data().to_vec();
    if let Some(out) = &cache.relu_output {
        for (gi, &o) in g.iter_mut().zip(out) {
            if o <= T::zero() {
                *gi = T::zero();
            }
        }
    }

    let bias: Vec<T> = g.chunks(np).map(|row| row.iter().copied().sum()).collect();

    let mut gk = vec![T::zero(); cout * k];
    gemm_nt(&g, &cache.columns, &mut gk, cout, np, k);

    let gin = if need_input {
        let mut gcols = vec![T::zero(); k * np];
        gemm_tn(kernels.data(), &g, &mut gcols, k, cout, np);
        let gin = col2im(
            &gcols,
            cache.input_shape,
            cache.kernel_hw,
            cache.out_hw,
            cache.stride,
            cache.pad,
        );
        Some(Tensor::from_vec(&cache.input_shape, gin)?)
    } else {
        None
    };

    Ok((
        (
            Tensor::from_vec(kernels.shape(), gk)?,
            Tensor::from_vec(&[cout], bias)?,
        ),
        gin,
    ))
}
