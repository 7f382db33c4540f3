//! Datasets: procedural digits, IDX files, composite canvases, manifests and
//! mask directories.

mod composite;
mod digits;
mod idx;
mod manifest;

pub use composite::{gen_composites, Composite, CANVAS};
pub use digits::{generate_digits, render_digit, Digit, DIGIT_SIZE};
pub use idx::{
    idx_bytes, load_idx, load_idx_labels, parse_idx, read_idx, write_idx, IdxArray, IMAGES_MAGIC,
    LABELS_MAGIC,
};
pub use manifest::{
    load_masks_dir, load_record, load_records, parse_manifest, read_manifest, read_mask_png,
    write_composites, write_manifest, write_mask_png, MaskDataset, MaskPair, SampleRecord,
};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::raster::{crop_region, resample_region, Plane, Region};

/// Crops `mask` around `b` (with the usual margin) and resizes to
/// `size×size`, re-binarizing at 0.5. Returns the crop and the image region
/// it covers.
pub fn crop_mask(mask: &Mask, b: &Region, size: usize) -> Result<(Mask, Region)> {
    let region = crop_region(b)?;
    let m = resample_region(&Plane::from_mask(mask), &region, size).to_mask(0.5);
    Ok((m, region))
}

/// Crop around the mask's own bounding box.
pub fn crop_mask_to_object(mask: &Mask, size: usize) -> Result<(Mask, Region)> {
    let b = mask.bbox().ok_or_else(|| Error::param("cannot crop an empty mask"))?;
    crop_mask(mask, &Region::from_pixels(b, mask.height(), mask.width()), size)
}

/// The whole mask resized to `size×size`.
pub fn resize_mask(mask: &Mask, size: usize) -> Mask {
    resample_region(&Plane::from_mask(mask), &Region::full(), size).to_mask(0.5)
}

/// A same-class mask pair for the matcher: the moving object cropped by its
/// own box and the fixed object cropped by its ground-truth box.
pub fn object_pair(c: &Composite, size: usize) -> Result<(Mask, Mask)> {
    let (m, _) = crop_mask_to_object(&c.moving_mask, size)?;
    let (f, _) = crop_mask(&c.fixed_mask, &c.gt, size)?;
    Ok((m, f))
}

/// The same pair without localization: both full frames resized.
pub fn full_frame_pair(c: &Composite, size: usize) -> (Mask, Mask) {
    (resize_mask(&c.moving_mask, size), resize_mask(&c.fixed_mask, size))
}
