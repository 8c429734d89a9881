//! Learned object placement for scene composition.
//!
//! Given a scene (RGB image plus a one-hot semantic layout) and a cut-out
//! object, a conditional VAE-GAN predicts a similarity transform `(s, tx, ty)`
//! that pastes the object somewhere plausible. Training is self-supervised:
//! an intact object is cut from each scene and its own placement is the target.
//!
//! [`geometry`] holds the differentiable warp, [`compositor`] the pasting of
//! images and layouts, and [`model`] with [`trainer`] the networks and their
//! optimization on the autodiff tape in [`nn`]. [`data`] reads and generates
//! datasets, and [`eval`] scores placements.

pub mod cli;
pub mod compositor;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod losses;
pub mod model;
pub mod nn;
pub mod trainer;

pub use error::{Error, Result};
