//! Turning head outputs into a single detection.

use crate::error::Result;

use super::anchors::AnchorSet;
use super::boxes::{decode, nms, BBox};
use super::input::{batch_tensor, PairInput};
use super::loss::ANCHOR_OUTPUTS;
use super::model::LocNetModel;

pub const NMS_THRESHOLD: f64 = 0.45;
pub const SCORE_THRESHOLD: f64 = 0.01;

/// Pairs per forward pass during inference.
pub const INFERENCE_BATCH: usize = 32;

/// Decodes one sample's `[A, 5]` predictions into scored, clipped boxes,
/// dropping scores below the threshold.
pub fn decode_predictions(pred: &[f64], anchors: &AnchorSet) -> Vec<BBox> {
    anchors
        .boxes
        .iter()
        .zip(pred.chunks_exact(ANCHOR_OUTPUTS))
        .filter_map(|(a, p)| {
            let score = 1.0 / (1.0 + (-p[4]).exp());
            if score < SCORE_THRESHOLD {
                return None;
            }
            let b = decode(&[p[0], p[1], p[2], p[3]], a);
            if !b.is_finite() {
                return None;
            }
            b.with_score(score).clipped()
        })
        .collect()
}

/// Highest-scoring box surviving NMS, or `None` when nothing clears the
/// score threshold.
pub fn best_detection(pred: &[f64], anchors: &AnchorSet) -> Option<BBox> {
    nms(&decode_predictions(pred, anchors), NMS_THRESHOLD).into_iter().next()
}

/// Runs the localizer on each pair and returns its detection.
pub fn detect_batch(model: &LocNetModel<f32>, pairs: &[&PairInput]) -> Result<Vec<Option<BBox>>> {
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(INFERENCE_BATCH) {
        let pred = model.predict(batch_tensor(chunk)?)?;
        let per = model.anchors.len() * ANCHOR_OUTPUTS;
        for row in pred.data().chunks_exact(per) {
            let row: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            out.push(best_detection(&row, &model.anchors));
        }
    }
    Ok(out)
}

pub fn detect(model: &LocNetModel<f32>, pair: &PairInput) -> Result<Option<BBox>> {
    Ok(detect_batch(model, &[pair])?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::locnet::build_anchors;

    #[test]
    fn a_single_confident_anchor_is_returned_as_is() {
        let anchors = build_anchors(112).unwrap();
        let mut pred = vec![-20.0; anchors.len() * 5];
        pred[42 * 5..42 * 5 + 4].fill(0.0);
        pred[42 * 5 + 4] = 5.0;
        let b = best_detection(&pred, &anchors).unwrap();
        let a = anchors.boxes[42];
        assert!((b.cx - a.cx).abs() < 1e-12 && (b.w - a.w).abs() < 1e-12);
        assert!((b.score - 1.0 / (1.0 + (-5.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn nothing_above_threshold_means_no_detection() {
        let anchors = build_anchors(112).unwrap();
        assert!(best_detection(&vec![-20.0; anchors.len() * 5], &anchors).is_none());
    }
}
