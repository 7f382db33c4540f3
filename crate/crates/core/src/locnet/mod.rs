//! Classless anchor-box localizer: finds the moving image's object inside
//! the fixed image.

mod anchors;
mod boxes;
mod detect;
mod input;
mod loss;
mod matching;
mod model;
mod train;

pub use anchors::{build_anchors, feature_sizes, layer_scale, AnchorSet, ASPECTS, SCALE_MAX, SCALE_MIN};
pub use boxes::{decode, encode, iou, nms, region_iou, BBox, VARIANCES};
pub use detect::{
    best_detection, decode_predictions, detect, detect_batch, INFERENCE_BATCH, NMS_THRESHOLD,
    SCORE_THRESHOLD,
};
pub use input::{batch_tensor, PairInput, TEMPLATE_SIZE};
pub use loss::{locnet_loss, ANCHOR_OUTPUTS, NEG_POS_RATIO};
pub use matching::{match_anchors, AnchorTargets, MATCH_THRESHOLD};
pub use model::{LocNetModel, BACKBONE, ENCODER, FILM_LAYER, INPUT_CHANNELS, PREDICTORS};
pub use train::{evaluate_locnet, train_locnet, LocEval, LocSample, LocTrainConfig};
