//! Dense non-rigid structure from motion with dynamic shape priors.
//!
//! The pipeline has three stages:
//!
//! 1. [`dcmdr`] reconstructs a deforming surface from dense 2D tracks by
//!    batch minimization of a robust energy with fit, temporal, trajectory
//!    linking and trajectory regularization terms, seeded by the rigid
//!    factorization in [`rigid`].
//! 2. [`dsp`] distills the reconstruction into a dynamic shape prior: a set
//!    of canonical states ordered by Frobenius norm.
//! 3. [`dspr`] reconstructs new frames one at a time by picking a prior
//!    state with multi-start discrete descent and solving for the camera
//!    rotation in closed form; the same machinery drives the compression
//!    codec.
//!
//! [`eval`] holds the error metrics, [`synth`] the synthetic scene
//! generator, [`io`] the on-disk matrix formats and [`codec`] the
//! compressed reconstruction stream.

// Validation uses `!(x > 0.0)`-style tests on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod dcmdr;
pub mod dsp;
pub mod dspr;
pub mod error;
pub mod eval;
pub mod geom;
pub mod io;
pub mod rigid;
pub mod synth;

pub use error::{Error, Result};
pub use geom::{CameraPose, MeasurementMatrix, NormMode, RobustNormConfig, ShapeSequence};
