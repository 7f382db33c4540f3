//! Localize, crop and match: deformable registration of binary object masks.
//!
//! A classless anchor-box localizer finds the moving image's object inside
//! the fixed image, both images are cropped around their objects, and a
//! spatial-transformer network predicts a thin-plate-spline warp that
//! aligns the moving mask with the fixed one under a dice + smoothness
//! objective.
//!
//! Everything runs on a small reverse-mode autodiff engine ([`ad`]) that is
//! generic over `f32` (training) and `f64` (gradient verification).

pub mod ad;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod geom;
pub mod gradcheck;
pub mod locnet;
pub mod loss;
pub mod mask;
pub mod matcher;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod raster;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
