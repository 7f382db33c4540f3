//! Single-channel object masks.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// An `h×w` grid of values in `[0, 1]`. Hard masks hold only 0 and 1;
/// warped masks may be fractional.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Mask {
    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::dim(format!(
                "mask {h}x{w} needs {} values, got {}",
                h * w,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::param(format!("mask value {bad} outside [0, 1]")));
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

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                data.push(if f(i, j) { 1.0 } else { 0.0 });
            }
        }
        Self { h, w, data }
    }

    /// Thresholds a grayscale plane: `v >= threshold` becomes 1.
    pub fn threshold(h: usize, w: usize, values: &[f32], threshold: f32) -> Result<Self> {
        if values.len() != h * w {
            return Err(Error::dim("threshold: value count does not match size"));
        }
        Ok(Self {
            h,
            w,
            data: values.iter().map(|&v| if v >= threshold { 1.0 } else { 0.0 }).collect(),
        })
    }

    /// Builds a mask from a tensor of any float type, clamping into `[0, 1]`.
    pub fn from_plane<T: Scalar>(h: usize, w: usize, values: &[T]) -> Result<Self> {
        if values.len() != h * w {
            return Err(Error::dim("from_plane: value count does not match size"));
        }
        Ok(Self {
            h,
            w,
            data: values
                .iter()
                .map(|v| (v.as_f64() as f32).clamp(0.0, 1.0))
                .collect(),
        })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.w + j]
    }

    /// Hard copy: values `>= 0.5` become 1.
    pub fn binarized(&self) -> Mask {
        Mask {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v >= 0.5).count()
    }

    /// `[1, 1, h, w]` tensor view.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(vec![1, 1, self.h, self.w], |i| T::lit(self.data[i] as f64))
    }

    /// Tight pixel bounding box of the hard mask as edge coordinates
    /// `(xmin, ymin, xmax, ymax)`, or `None` when empty.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut out: Option<(usize, usize, usize, usize)> = None;
        for i in 0..self.h {
            for j in 0..self.w {
                if self.get(i, j) >= 0.5 {
                    out = Some(match out {
                        None => (j, i, j + 1, i + 1),
                        Some((x0, y0, x1, y1)) => (x0.min(j), y0.min(i), x1.max(j + 1), y1.max(i + 1)),
                    });
                }
            }
        }
        out
    }

    /// Intensity-weighted centroid `(row, col)`.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut s, mut si, mut sj) = (0.0, 0.0, 0.0);
        for i in 0..self.h {
            for j in 0..self.w {
                let v = self.get(i, j) as f64;
                s += v;
                si += v * i as f64;
                sj += v * j as f64;
            }
        }
        (s > 0.0).then(|| (si / s, sj / s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_values() {
        assert!(Mask::new(1, 2, vec![0.0, 1.5]).is_err());
        assert!(Mask::new(1, 2, vec![0.0]).is_err());
        assert!(Mask::new(1, 2, vec![0.0, 0.25]).is_ok());
    }

    #[test]
    fn bbox_uses_edge_coordinates() {
        let m = Mask::from_fn(6, 6, |i, j| (2..4).contains(&i) && (1..5).contains(&j));
        assert_eq!(m.bbox(), Some((1, 2, 5, 4)));
        assert_eq!(Mask::zeros(3, 3).bbox(), None);
    }
}
