//! Forward and backward kernels for every layer kind, plus the optimizer step.

mod conv;
mod dropout;
mod fc;
pub(crate) mod linalg;
mod lrn;
mod optim;
mod pool;

pub use conv::{conv2d, conv2d_backward, conv_output_extent, ConvCache, ConvGrads, ConvParams};
pub(crate) use conv::{conv2d_backward_parts, conv2d_parts};
pub use dropout::{dropout, dropout_backward, Mode};
pub use fc::{fc_backward, fully_connected, FcCache, FcGrads};
pub use lrn::{lrn, lrn_backward, LrnCache, LrnParams};
pub use optim::{sgd_momentum_step, OptState};
pub use pool::{maxpool, maxpool_backward, PoolCache};
