//! Localization and tracking of a single sound source from microphone-array
//! audio.
//!
//! The processing chain is:
//!
//! 1. [`audio_io`]: WAV ingestion, array geometry and windowed spectra at the
//!    requested output timestamps.
//! 2. [`gcc_phat`]: phase-transform cross correlation for every microphone
//!    pair.
//! 3. [`gcf_map`]: the Global Coherence Field over a 3D grid, its per-frame
//!    peak and the modal estimate for static sources.
//! 4. [`tracker`]: a particle filter driven by a selective likelihood.
//! 5. [`front_back`]: detection of a single front/back crossing for planar
//!    arrays and y-reversal of the affected estimates.
//! 6. [`smooth_eval`]: velocity-based outlier smoothing, angle conversion and
//!    mean absolute error.
//!
//! [`scene_sim`] renders synthetic free-field scenes with ground truth and
//! [`pipeline`] ties everything together in the two-pass batch pipeline used
//! by the `gcftrack` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio_io;
pub mod error;
pub mod front_back;
pub mod gcc_phat;
pub mod gcf_map;
pub mod pipeline;
pub mod scene_sim;
pub mod smooth_eval;
pub mod tracker;

pub use error::{Error, Result};

/// A point or displacement in meters.
pub type Point3 = nalgebra::Vector3<f64>;

/// Speed of sound used when nothing else is configured, in m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;
