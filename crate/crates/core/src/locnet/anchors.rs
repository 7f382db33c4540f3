//! Default boxes tied to the predictor feature maps.

use crate::error::{Error, Result};

use super::boxes::BBox;
use super::model::{BACKBONE, PREDICTORS};

pub const ASPECTS: [f64; 3] = [0.5, 1.0, 2.0];
pub const SCALE_MIN: f64 = 0.08;
pub const SCALE_MAX: f64 = 0.96;

/// Spatial size of every backbone conv output for a square input. Each conv
/// is stride 1; a 2×2 stride-2 pool sits between consecutive convs.
pub fn feature_sizes(input: usize) -> Result<[usize; 7]> {
    let mut sizes = [0; 7];
    let mut s = input;
    for (l, &(_, k, p)) in BACKBONE.iter().enumerate() {
        if s + 2 * p < k {
            return Err(Error::param(format!(
                "input size {input} too small: layer c{} sees {s} pixels",
                l + 1
            )));
        }
        s = s + 2 * p - k + 1;
        sizes[l] = s;
        if l + 1 < BACKBONE.len() {
            if s < 2 {
                return Err(Error::param(format!(
                    "input size {input} too small: pool after c{} sees {s} pixels",
                    l + 1
                )));
            }
            s = (s - 2) / 2 + 1;
        }
    }
    Ok(sizes)
}

/// Linearly spaced scale of predictor layer `l` out of `n`.
pub fn layer_scale(l: usize, n: usize) -> f64 {
    if n < 2 {
        return SCALE_MIN;
    }
    SCALE_MIN + (SCALE_MAX - SCALE_MIN) * l as f64 / (n - 1) as f64
}

/// Anchors for all predictor layers, ordered by layer, then cell row, cell
/// column and aspect ratio.
#[derive(Clone, Debug)]
pub struct AnchorSet {
    pub boxes: Vec<BBox>,
    /// `(fh, fw, scale)` per predictor layer.
    pub layers: Vec<(usize, usize, f64)>,
    pub input_size: usize,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Index of the first anchor of each layer.
    pub fn offsets(&self) -> Vec<usize> {
        let mut at = 0;
        self.layers
            .iter()
            .map(|&(fh, fw, _)| {
                let o = at;
                at += fh * fw * ASPECTS.len();
                o
            })
            .collect()
    }
}

pub fn build_anchors(input_size: usize) -> Result<AnchorSet> {
    let sizes = feature_sizes(input_size)?;
    let mut boxes = Vec::new();
    let mut layers = Vec::new();
    for (l, &layer) in PREDICTORS.iter().enumerate() {
        let f = sizes[layer];
        let s = layer_scale(l, PREDICTORS.len());
        for i in 0..f {
            for j in 0..f {
                let (cx, cy) = ((j as f64 + 0.5) / f as f64, (i as f64 + 0.5) / f as f64);
                for &a in &ASPECTS {
                    let b = BBox::new(cx, cy, s * a.sqrt(), s / a.sqrt());
                    boxes.push(b.clipped().expect("anchor centres lie inside the image"));
                }
            }
        }
        layers.push((f, f, s));
    }
    Ok(AnchorSet {
        boxes,
        layers,
        input_size,
    })
}
