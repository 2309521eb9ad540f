//! Sheaf diffusion on graphs with polynomial spectral filters.
//!
//! The crate builds cellular sheaf Laplacians over graphs (diagonal,
//! orthogonal, or unconstrained restriction maps), rescales them onto the
//! Chebyshev reference interval, and runs learnable polynomial diffusion
//! layers on top, with a first-order baseline layer for comparison. Training
//! uses a hand-written reverse pass (no autograd dependency) and Adam.
//!
//! Layout:
//! - [`graph`], [`cochain`]: combinatorics and node-feature storage
//! - [`sheaf`], [`laplacian`]: restriction maps, block-sparse operators
//! - [`spectral`], [`oracle`]: lambda-max bounds, Chebyshev filters, dense
//!   eigendecomposition reference
//! - [`layer`], [`model`], [`grad`], [`train`]: the diffusion layers, model
//!   assembly, reverse pass, optimizer loop
//! - [`synth`], [`dataset`]: benchmark generator and file loaders
//! - [`experiment`], [`results`]: sweep driver and result tables

pub mod cochain;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod grad;
pub mod graph;
pub mod laplacian;
pub mod layer;
pub mod model;
pub mod oracle;
pub mod results;
pub mod sheaf;
pub mod spectral;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
