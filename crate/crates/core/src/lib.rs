//! Deep ranking for person re-identification.
//!
//! A convolutional network scores a *stitched pair* (two person images resized
//! and placed side by side) with a single similarity value. Training organizes
//! labelled images into ranking units (probe, true match, sampled mismatches)
//! and minimizes a base-2 logistic surrogate of the true match's rank.
//! Evaluation covers closed-world CMC curves, open-world TTR/FTR sweeps and
//! late score fusion.
//!
//! The guide under `book/` walks through each piece; its code listings are
//! compiled and run as doc-tests of this crate.

pub mod data;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod kernels;
pub mod net;
pub mod rank;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/pairs.md")]
    mod pairs {}
    #[doc = include_str!("../../../book/src/ranking.md")]
    mod ranking {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
