//! Intrinsic-domain single-image HDR reconstruction.
//!
//! The crate is organised bottom-up:
//!
//! - [`image`]: linear and quantized image containers, percentiles, pyramids, gradients.
//! - [`intrinsic`]: the `I = A * S` model and its bounded inverse representations.
//! - [`isp`]: exposure / clipping / CRF / quantization simulation and procedural scenes.
//! - [`autodiff`]: a reverse-mode tape and the shading, albedo and refinement losses.
//! - [`models`]: tiny encoder–decoder networks, RAdam training and end-to-end reconstruction.
//! - [`eval`]: range mapping, scale alignment, CRF correction and PU21 metrics.
//! - [`io`]: PFM, Radiance HDR and PNG codecs, dataset manifests, checkpoints.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod image;
pub mod intrinsic;
pub mod io;
pub mod isp;
pub mod models;

pub use error::{Error, Result};
pub use image::{LdrImage, LinearImage};
