//! Inverted dropout.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// In train mode each element is zeroed with probability `rate` and survivors
/// are scaled by `1/(1 − rate)`. Returns the output and the multiplicative mask.
pub fn dropout<T: Real, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((input.clone(), Tensor::full(input.shape(), T::one())));
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    let mask = Tensor::from_fn(input.shape(), |_| {
        if rng.random::<f64>() < rate {
            T::zero()
        } else {
            keep
        }
    });
    let out = Tensor::from_vec(
        input.shape(),
        input.data().iter().zip(mask.data()).map(|(&x, &m)| x * m).collect(),
    )?;
    Ok((out, mask))
}

pub fn dropout_backward<T: Real>(mask: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if mask.len() != grad_out.len() {
        return Err(Error::shape(
            "dropout_backward",
            format!("{:?} vs {:?}", mask.shape(), grad_out.shape()),
        ));
    }
    Tensor::from_vec(
        mask.shape(),
        grad_out.data().iter().zip(mask.data()).map(|(&g, &m)| g * m).collect(),
    )
}
