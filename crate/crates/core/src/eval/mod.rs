//! Closed-world CMC, open-world TTR/FTR and late score fusion.

pub mod cmc;
pub mod open_world;
pub mod scores;

pub use cmc::{average_curves, cmc_from_scores, cmc_trials, true_match_ranks, CmcCurve, TiePolicy};
pub use open_world::{open_world_sweep, pick_targets, verification_scores, write_open_world_csv, OpenWorldPoint};
pub use scores::{
    fuse_scores, multishot_aggregate, raw_pixel_scores, score_matrix, Aggregate, Normalization, ScoreMatrix,
};
