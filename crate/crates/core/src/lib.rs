//! Non-learned core of a rotated-box single-stage detector.
//!
//! Boxes are `(x, y, w, h, theta)` with `theta` in degrees, `[0, 90)`,
//! clockwise-positive in image coordinates (y down). The head predicts the
//! angle as a class over `n_d` bins; everything else is classic
//! anchor-based decoding.

pub mod anchors;
pub mod angle;
pub mod assign;
pub mod bench;
pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod head;
pub mod io;
pub mod loss;
pub mod mask;
pub mod nms;
pub mod overlap;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
