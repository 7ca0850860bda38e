use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// SGD-with-momentum state. `velocity[i]` mirrors the shape of parameter `i`.
#[derive(Debug, Clone)]
pub struct OptState<T> {
    pub velocity: Vec<Tensor<T>>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl<T: Real> OptState<T> {
    pub fn new(params: &[Tensor<T>], learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        for (name, v) in [
            ("learning_rate", learning_rate),
            ("momentum", momentum),
            ("weight_decay", weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(OptState {
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            learning_rate,
            momentum,
            weight_decay,
        })
    }
}

/// `v ← momentum·v − lr·(grad + weight_decay·param); param ← param + v`.
/// Weight decay applies to every parameter array, biases included.
pub fn sgd_momentum_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptState<T>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::shape(
            "sgd_momentum_step",
            format!(
                "{} params, {} grads, {} velocities",
                params.len(),
                grads.len(),
                state.velocity.len()
            ),
        ));
    }
    for (i, ((p, g), v)) in params.iter().zip(grads).zip(&state.velocity).enumerate() {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::shape(
                "sgd_momentum_step",
                format!(
                    "array {i}: param {:?}, grad {:?}, velocity {:?}",
                    p.shape(),
                    g.shape(),
                    v.shape()
                ),
            ));
        }
    }
    let lr = T::from_f64_lossy(state.learning_rate);
    let mu = T::from_f64_lossy(state.momentum);
    let wd = T::from_f64_lossy(state.weight_decay);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = mu * *vi - lr * (gi + wd * *pi);
            *pi += *vi;
        }
    }
    Ok(())
}
