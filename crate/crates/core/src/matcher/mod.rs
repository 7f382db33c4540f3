//! Spatial-transformer matcher: predicts a thin-plate-spline warp that
//! aligns a moving mask with a fixed mask.

mod model;
mod train;

pub use model::{pooled_size, MatcherConfig, MatcherForward, MatcherModel, CONV_CHANNELS, LEAKY_ALPHA};
pub use train::{
    forward, masks_tensor, match_pairs, summarize, train_matcher, MatchResult, MatcherTrainConfig,
    EVAL_BATCH,
};
