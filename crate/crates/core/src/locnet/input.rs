//! Builds the localizer's two-channel input from a moving/fixed pair.
//!
//! The moving object is cropped to a small template which is tiled over the
//! fixed image's frame, so every cell of the backbone sees a copy of the
//! object it is looking for next to the fixed image content.

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::raster::{crop_resize, Plane, Region};
use crate::tensor::{Scalar, Tensor};

use super::model::INPUT_CHANNELS;

/// Side of the moving-object template.
pub const TEMPLATE_SIZE: usize = 28;

#[derive(Clone, Debug)]
pub struct PairInput {
    pub template: Plane,
    pub fixed: Plane,
}

impl PairInput {
    /// `moving_mask` locates the object in `moving`.
    pub fn new(moving: &Plane, moving_mask: &Mask, fixed: &Plane) -> Result<Self> {
        if fixed.h != fixed.w {
            return Err(Error::param(format!("fixed image must be square, got {}x{}", fixed.h, fixed.w)));
        }
        if moving_mask.height() != moving.h || moving_mask.width() != moving.w {
            return Err(Error::dim("moving mask and moving image differ in size"));
        }
        let bbox = moving_mask
            .bbox()
            .ok_or_else(|| Error::param("moving mask is empty"))?;
        let region = Region::from_pixels(bbox, moving.h, moving.w);
        Ok(Self {
            template: crop_resize(moving, &region, TEMPLATE_SIZE)?,
            fixed: fixed.clone(),
        })
    }

    pub fn size(&self) -> usize {
        self.fixed.h
    }

    /// Writes the `[2, S, S]` input: tiled template, then the fixed image.
    pub fn write<T: Scalar>(&self, out: &mut [T]) {
        let s = self.size();
        let (tpl, plane) = out.split_at_mut(s * s);
        for i in 0..s {
            for j in 0..s {
                tpl[i * s + j] = T::lit(self.template.get(i % TEMPLATE_SIZE, j % TEMPLATE_SIZE) as f64);
            }
        }
        for (o, &v) in plane.iter_mut().zip(&self.fixed.data) {
            *o = T::lit(v as f64);
        }
    }
}

/// Stacks pair inputs into `[N, 2, S, S]`.
pub fn batch_tensor<T: Scalar>(pairs: &[&PairInput]) -> Result<Tensor<T>> {
    let s = pairs.first().map_or(0, |p| p.size());
    if pairs.iter().any(|p| p.size() != s) {
        return Err(Error::dim("pair inputs differ in size"));
    }
    let per = INPUT_CHANNELS * s * s;
    let mut data = vec![T::zero(); pairs.len() * per];
    for (p, chunk) in pairs.iter().zip(data.chunks_mut(per.max(1))) {
        p.write(chunk);
    }
    Tensor::new(vec![pairs.len(), INPUT_CHANNELS, s, s], data)
}
