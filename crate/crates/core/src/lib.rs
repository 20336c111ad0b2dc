//! Fitting a parametric body model to nonparametric body estimates, plus the
//! heatmap decoding, volumetric spectral encoding and interior-point tools that
//! surround it.

pub mod array_io;
pub mod body_model;
pub mod deform;
pub mod error;
pub mod fitter;
pub mod gps;
pub mod heatmap;
pub mod metrics;
pub mod rotation;
pub mod shape_solver;
pub mod synth;
pub mod toy;

pub use body_model::{BodyModel, PoseParams, Posed};
pub use error::{Error, Result};
pub use fitter::{fit, fit_shared_beta, fit_subset, stratified_subset, FitConfig, FitResult, FitTarget};
