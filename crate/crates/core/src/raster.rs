//! Grayscale planes, PNG I/O and region resampling.

use std::path::Path;

use image::{ColorType, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::mask::Mask;

/// A single-channel image with values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::dim(format!(
                "plane {h}x{w} needs {} values, got {}",
                h * w,
                data.len()
            )));
        }
        Ok(Self { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.w + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.data[i * self.w + j] = v;
    }

    /// Bilinear lookup at pixel-centre coordinates, clamped to the border.
    pub fn sample_clamped(&self, py: f64, px: f64) -> f32 {
        let py = py.clamp(0.0, (self.h - 1) as f64);
        let px = px.clamp(0.0, (self.w - 1) as f64);
        let (y0, x0) = (py.floor() as usize, px.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.h - 1), (x0 + 1).min(self.w - 1));
        let (fy, fx) = ((py - y0 as f64) as f32, (px - x0 as f64) as f32);
        let top = self.get(y0, x0) * (1.0 - fx) + self.get(y0, x1) * fx;
        let bot = self.get(y1, x0) * (1.0 - fx) + self.get(y1, x1) * fx;
        top * (1.0 - fy) + bot * fy
    }

    pub fn to_mask(&self, threshold: f32) -> Mask {
        Mask::threshold(self.h, self.w, &self.data, threshold).expect("sizes agree")
    }

    pub fn from_mask(mask: &Mask) -> Self {
        Self {
            h: mask.height(),
            w: mask.width(),
            data: mask.data().to_vec(),
        }
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_u8(h: usize, w: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(h, w, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }
}

/// Box in normalized corner form, `[0, 1]` along each axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl Region {
    pub fn full() -> Self {
        Self {
            xmin: 0.0,
            ymin: 0.0,
            xmax: 1.0,
            ymax: 1.0,
        }
    }

    /// From pixel edge coordinates of an `h×w` image.
    pub fn from_pixels(b: (usize, usize, usize, usize), h: usize, w: usize) -> Self {
        Self {
            xmin: b.0 as f64 / w as f64,
            ymin: b.1 as f64 / h as f64,
            xmax: b.2 as f64 / w as f64,
            ymax: b.3 as f64 / h as f64,
        }
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    /// Grows by `frac` of the width/height on every side, then clips to
    /// the unit square.
    pub fn expanded(&self, frac: f64) -> Self {
        let (dx, dy) = (self.width() * frac, self.height() * frac);
        Self {
            xmin: (self.xmin - dx).max(0.0),
            ymin: (self.ymin - dy).max(0.0),
            xmax: (self.xmax + dx).min(1.0),
            ymax: (self.ymax + dy).min(1.0),
        }
    }
}

/// Fraction added on every side of a box before cropping.
pub const CROP_MARGIN: f64 = 0.1;

/// The image region a crop of `b` actually covers (expanded and clipped).
pub fn crop_region(b: &Region) -> Result<Region> {
    if !(b.width() > 0.0 && b.height() > 0.0) {
        return Err(Error::param(format!("degenerate crop box {b:?}")));
    }
    let r = b.expanded(CROP_MARGIN);
    if !(r.width() > 0.0 && r.height() > 0.0) {
        return Err(Error::param(format!("crop box {b:?} does not intersect the image")));
    }
    Ok(r)
}

/// Resamples `region` of `image` onto an `out×out` grid. When the region is
/// larger than the output each output pixel averages a grid of bilinear
/// samples so thin strokes survive downscaling.
pub fn resample_region(image: &Plane, region: &Region, out: usize) -> Plane {
    let x0 = region.xmin * image.w as f64;
    let y0 = region.ymin * image.h as f64;
    let sx = region.width() * image.w as f64 / out as f64;
    let sy = region.height() * image.h as f64 / out as f64;
    let nx = sx.ceil().max(1.0) as usize;
    let ny = sy.ceil().max(1.0) as usize;
    let mut res = Plane::zeros(out, out);
    for i in 0..out {
        for j in 0..out {
            let mut acc = 0.0f32;
            for a in 0..ny {
                for b in 0..nx {
                    let v = y0 + (i as f64 + (a as f64 + 0.5) / ny as f64) * sy;
                    let u = x0 + (j as f64 + (b as f64 + 0.5) / nx as f64) * sx;
                    acc += image.sample_clamped(v - 0.5, u - 0.5);
                }
            }
            res.set(i, j, acc / (nx * ny) as f32);
        }
    }
    res
}

/// Crops `b` (plus a 10% margin per side, clipped to the image) and resizes
/// the result to `out×out`.
pub fn crop_resize(image: &Plane, b: &Region, out: usize) -> Result<Plane> {
    if out == 0 {
        return Err(Error::param("crop output size must be positive"));
    }
    Ok(resample_region(image, &crop_region(b)?, out))
}

/// Inverse of [`resample_region`]: places an `out×out` crop back into an
/// `h×w` frame. Pixels outside the region are zero.
pub fn paste_region(crop: &Plane, region: &Region, h: usize, w: usize) -> Plane {
    let mut res = Plane::zeros(h, w);
    let (x0, y0) = (region.xmin * w as f64, region.ymin * h as f64);
    let (rw, rh) = (region.width() * w as f64, region.height() * h as f64);
    for i in 0..h {
        let v = i as f64 + 0.5;
        if v < y0 || v > y0 + rh {
            continue;
        }
        for j in 0..w {
            let u = j as f64 + 0.5;
            if u < x0 || u > x0 + rw {
                continue;
            }
            let cy = (v - y0) / rh * crop.h as f64 - 0.5;
            let cx = (u - x0) / rw * crop.w as f64 - 0.5;
            res.set(i, j, crop.sample_clamped(cy, cx));
        }
    }
    res
}

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Reads an 8-bit grayscale PNG; any other pixel format is an error.
pub fn read_gray_png(path: impl AsRef<Path>) -> Result<Plane> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    if img.color() != ColorType::L8 {
        return Err(image_err(path, format!("expected 8-bit grayscale, found {:?}", img.color())));
    }
    let g = img.into_luma8();
    Plane::from_u8(g.height() as usize, g.width() as usize, g.as_raw())
}

/// Reads any PNG and converts it to luma.
pub fn read_png_luma(path: impl AsRef<Path>) -> Result<Plane> {
    let path = path.as_ref();
    let g = image::open(path).map_err(|e| image_err(path, e))?.into_luma8();
    Plane::from_u8(g.height() as usize, g.width() as usize, g.as_raw())
}

pub fn write_gray_png(path: impl AsRef<Path>, plane: &Plane) -> Result<()> {
    let path = path.as_ref();
    let img: GrayImage =
        ImageBuffer::<Luma<u8>, _>::from_raw(plane.w as u32, plane.h as u32, plane.to_u8())
            .ok_or_else(|| image_err(path, "buffer size mismatch"))?;
    img.save(path).map_err(|e| image_err(path, e))
}

/// Agreement overlay: red where only `fixed` is set, green where only
/// `warped` is set, yellow where both are.
pub fn write_overlay_png(path: impl AsRef<Path>, fixed: &Mask, warped: &Mask) -> Result<()> {
    let path = path.as_ref();
    if fixed.height() != warped.height() || fixed.width() != warped.width() {
        return Err(Error::dim("overlay masks differ in size"));
    }
    let mut img = RgbImage::new(fixed.width() as u32, fixed.height() as u32);
    for i in 0..fixed.height() {
        for j in 0..fixed.width() {
            let (f, m) = (fixed.get(i, j) >= 0.5, warped.get(i, j) >= 0.5);
            let px = match (f, m) {
                (true, true) => [255, 255, 0],
                (true, false) => [255, 0, 0],
                (false, true) => [0, 255, 0],
                (false, false) => [0, 0, 0],
            };
            img.put_pixel(j as u32, i as u32, Rgb(px));
        }
    }
    img.save(path).map_err(|e| image_err(path, e))
}
