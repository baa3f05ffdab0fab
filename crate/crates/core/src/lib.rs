//! Region-aware color editing with white-box filters: masked, θ-linear
//! filter increments composited in parallel, fitted by gradient descent,
//! and baked to 3-D LUTs where the recipe is pointwise.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar for typical use.

// `!(x > 0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod color;
pub mod error;
pub mod filters;
pub mod fit;
pub mod image;
pub mod io;
pub mod lut;
pub mod metrics;
pub mod palette;
pub mod recipe_file;
pub mod render;
pub mod scalar;
pub mod smooth;

pub use error::{Error, Result};
pub use filters::{Channel, Channels, FilterArg, FilterConstants, FilterKind};
pub use image::{Image, Mask};
pub use render::{render, render_sequential, Layer, LayerMask, Recipe};
pub use scalar::Scalar;

pub type ImageF64 = Image<f64>;
pub type ImageF32 = Image<f32>;
pub type MaskF64 = Mask<f64>;
pub type MaskF32 = Mask<f32>;
pub type RecipeF64 = Recipe<f64>;
pub type RecipeF32 = Recipe<f32>;
pub type LayerF64 = Layer<f64>;
pub type FitConfigF64 = fit::FitConfig<f64>;
pub type FitReportF64 = fit::FitReport<f64>;
pub type Lut3DF64 = lut::Lut3D<f64>;
