//! Ground-truth to anchor assignment.

use super::anchors::AnchorSet;
use super::boxes::{encode, iou, BBox};

/// IoU at or above which an anchor is positive.
pub const MATCH_THRESHOLD: f64 = 0.5;

/// Per-anchor training targets for one image pair.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorTargets {
    pub positive: Vec<bool>,
    /// Encoded offsets; zero for negatives.
    pub offsets: Vec<[f64; 4]>,
}

impl AnchorTargets {
    pub fn positives(&self) -> usize {
        self.positive.iter().filter(|&&p| p).count()
    }
}

/// Marks the best-overlapping anchor (first on ties) and every anchor with
/// IoU ≥ 0.5 as positive, so at least one positive always exists.
pub fn match_anchors(anchors: &AnchorSet, gt: &BBox) -> AnchorTargets {
    let ious: Vec<f64> = anchors.boxes.iter().map(|a| iou(a, gt)).collect();
    let best = ious
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v > ious[b] { i } else { b });
    let mut positive: Vec<bool> = ious.iter().map(|&v| v >= MATCH_THRESHOLD).collect();
    if !positive.is_empty() {
        positive[best] = true;
    }
    let offsets = anchors
        .boxes
        .iter()
        .zip(&positive)
        .map(|(a, &p)| if p { encode(gt, a) } else { [0.0; 4] })
        .collect();
    AnchorTargets { positive, offsets }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::locnet::build_anchors;

    #[test]
    fn an_anchor_used_as_ground_truth_matches_itself() {
        let anchors = build_anchors(112).unwrap();
        let gt = anchors.boxes[100];
        let t = match_anchors(&anchors, &gt);
        assert!(t.positive[100]);
        assert_eq!(t.offsets[100], [0.0; 4]);
    }

    #[test]
    fn a_box_overlapping_nothing_still_gets_a_positive() {
        let anchors = build_anchors(112).unwrap();
        let gt = BBox::new(0.001, 0.001, 0.001, 0.001);
        assert!(match_anchors(&anchors, &gt).positives() >= 1);
    }
}
