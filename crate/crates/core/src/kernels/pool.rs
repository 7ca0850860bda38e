//! Max pooling over square windows.

use super::conv::conv_output_extent;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone)]
pub struct PoolCache {
    input_shape: [usize; 3],
    /// Flat input offset of each output element's maximum.
    argmax: Vec<usize>,
}

/// Max pooling of a `[C, H, W]` input. Ties resolve to the first element in
/// row-major window order.
pub fn maxpool<T: Real>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, PoolCache)> {
    if input.rank() != 3 {
        return Err(Error::shape(
            "maxpool",
            format!("input must be [C, H, W], got {:?}", input.shape()),
        ));
    }
    if stride == 0 || window == 0 {
        return Err(Error::invalid("maxpool window and stride must be positive"));
    }
    let [c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let (oh, ow) = match (
        conv_output_extent(h, window, stride, 0),
        conv_output_extent(w, window, stride, 0),
    ) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(Error::shape(
                "maxpool",
                format!("window {window} larger than input {h}x{w}"),
            ))
        }
    };

    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for dy in 0..window {
                    let row = base + (oy * stride + dy) * w + ox * stride;
                    for i in row..row + window {
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::from_vec(&[c, oh, ow], out)?,
        PoolCache {
            input_shape: [c, h, w],
            argmax,
        },
    ))
}

pub fn maxpool_backward<T: Real>(cache: &PoolCache, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.len() != cache.argmax.len() {
        return Err(Error::shape(
            "maxpool_backward",
            format!(
                "grad_out has {} elements, forward output had {}",
                grad_out.len(),
                cache.argmax.len()
            ),
        ));
    }
    let mut gin = Tensor::zeros(&cache.input_shape);
    let g = gin.data_mut();
    for (&src, &go) in cache.argmax.iter().zip(grad_out.data()) {
        g[src] += go;
    }
    Ok(gin)
}
