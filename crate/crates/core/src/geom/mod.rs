//! Thin-plate-spline warping and differentiable resampling: the layer that
//! turns predicted parameters into a warped mask.

mod sample;
mod tps;

pub use tps::{
    lattice_coord, tps_grid, tps_kernel, tps_solve, ControlGrid, TpsBasis, TpsCoeffs, TpsParams,
    WarpField, IDENTITY_AFFINE,
};

use crate::ad::Tape;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::tensor::Tensor;

/// Samples `mask` through a warp field with zero padding.
pub fn bilinear_sample(mask: &Mask, field: &WarpField) -> Result<Mask> {
    if !field.is_finite() {
        return Err(Error::param("warp field contains non-finite coordinates"));
    }
    let mut tape = Tape::<f64>::new();
    let img = tape.constant(mask.to_tensor());
    let f = tape.constant(field.to_tensor());
    let out = tape.bilinear_sample(img, f)?;
    Mask::from_plane(field.h, field.w, tape.value(out).data())
}

/// Warps a mask by TPS parameters (backward warping: each output pixel
/// reads the input at its transformed location).
pub fn warp_mask(mask: &Mask, params: &TpsParams, grid: &ControlGrid) -> Result<Mask> {
    let (h, w) = (mask.height(), mask.width());
    let mut tape = Tape::<f64>::new();
    let p = tape.constant(Tensor::new(vec![1, grid.param_len()], params.to_vec())?);
    let coeffs = tape.tps_solve(p, grid)?;
    let basis = grid.basis::<f64>(h, w);
    let field = tape.tps_grid(coeffs, &basis)?;
    let img = tape.constant(mask.to_tensor());
    let out = tape.bilinear_sample(img, field)?;
    Mask::from_plane(h, w, tape.value(out).data())
}
