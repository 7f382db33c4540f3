//! Center-size boxes, IoU, anchor offset coding and non-maximum suppression.

use crate::raster::Region;

/// A box in normalized center-size form with an objectness score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
}

/// Offset scaling applied when encoding against an anchor:
/// center offsets ×10, log sizes ×5.
pub const VARIANCES: [f64; 4] = [10.0, 10.0, 5.0, 5.0];

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self {
            cx,
            cy,
            w,
            h,
            score: 1.0,
        }
    }

    pub fn from_corners(r: &Region) -> Self {
        Self::new(
            (r.xmin + r.xmax) / 2.0,
            (r.ymin + r.ymax) / 2.0,
            r.xmax - r.xmin,
            r.ymax - r.ymin,
        )
    }

    pub fn corners(&self) -> Region {
        Region {
            xmin: self.cx - self.w / 2.0,
            ymin: self.cy - self.h / 2.0,
            xmax: self.cx + self.w / 2.0,
            ymax: self.cy + self.h / 2.0,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    /// Clips the corners to the unit square. `None` if nothing is left.
    pub fn clipped(&self) -> Option<Self> {
        let r = self.corners();
        let c = Region {
            xmin: r.xmin.clamp(0.0, 1.0),
            ymin: r.ymin.clamp(0.0, 1.0),
            xmax: r.xmax.clamp(0.0, 1.0),
            ymax: r.ymax.clamp(0.0, 1.0),
        };
        (c.width() > 0.0 && c.height() > 0.0).then(|| Self::from_corners(&c).with_score(self.score))
    }

    pub fn is_finite(&self) -> bool {
        [self.cx, self.cy, self.w, self.h].iter().all(|v| v.is_finite())
    }
}

/// Intersection over union of two boxes; 0 when either is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    region_iou(&a.corners(), &b.corners())
}

pub fn region_iou(a: &Region, b: &Region) -> f64 {
    let iw = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let ih = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    let inter = iw * ih;
    let union = a.width().max(0.0) * a.height().max(0.0) + b.width().max(0.0) * b.height().max(0.0)
        - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Encodes `gt` as scaled offsets relative to `anchor`.
pub fn encode(gt: &BBox, anchor: &BBox) -> [f64; 4] {
    [
        (gt.cx - anchor.cx) / anchor.w * VARIANCES[0],
        (gt.cy - anchor.cy) / anchor.h * VARIANCES[1],
        (gt.w / anchor.w).ln() * VARIANCES[2],
        (gt.h / anchor.h).ln() * VARIANCES[3],
    ]
}

/// Inverse of [`encode`].
pub fn decode(t: &[f64; 4], anchor: &BBox) -> BBox {
    BBox::new(
        anchor.cx + t[0] / VARIANCES[0] * anchor.w,
        anchor.cy + t[1] / VARIANCES[1] * anchor.h,
        anchor.w * (t[2] / VARIANCES[2]).exp(),
        anchor.h * (t[3] / VARIANCES[3]).exp(),
    )
}

/// Greedy NMS: keeps boxes in descending score order (ties by input order)
/// and drops any box whose IoU with a kept one exceeds `threshold`.
pub fn nms(boxes: &[BBox], threshold: f64) -> Vec<BBox> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].score.total_cmp(&boxes[a].score).then(a.cmp(&b)));
    let mut kept: Vec<BBox> = Vec::new();
    for i in order {
        if kept.iter().all(|k| iou(k, &boxes[i]) <= threshold) {
            kept.push(boxes[i]);
        }
    }
    kept
}
