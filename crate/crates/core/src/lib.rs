//! Learned additive embedding costs for grayscale JPEG images.
//!
//! The crate covers the DCT-domain image model ([`jpeg`]), the optimal
//! embedding simulator ([`distortion`]), the UERD baseline and fixed texture
//! providers ([`uerd`], [`texture`]), a small autodiff engine ([`nn`]), the
//! cost-generating policy network ([`policy`]), the reward-providing
//! environment network ([`env`]), the alternating training loop
//! ([`trainer`]) and the gradient-propagation analysis ([`analysis`]).

pub mod analysis;
pub mod config;
pub mod distortion;
pub mod env;
pub mod error;
pub mod grid;
pub mod jmap;
pub mod jpeg;
pub mod nn;
pub mod policy;
pub mod texture;
pub mod trainer;
pub mod uerd;

pub use error::{Error, Result};
pub use grid::{Grid, Volume};
