//! From person images to network inputs and ranking units.

pub mod image;
pub mod sampler;
pub mod stitch;

pub use image::{channel_mean, resize_bilinear, ImageKey, PersonImage, MIN_EXTENT};
pub use sampler::{
    build_units, make_minibatches, positive_candidates, reference_candidates, Curriculum, RankingUnit, SamplerPolicy,
    REFERENCE_SIZES,
};
pub use stitch::{
    augment_variant, central_crop, check_side, random_crop, resize_half, stitch, test_time_inputs, StitchedPair, Variant,
};
