//! Blocks, transforms, codec and geometry for template-synchronized image watermarking.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the precision used by the pipeline.

pub mod curvelet;
pub mod dataset;
pub mod dct;
pub mod error;
pub mod fft;
pub mod geometry;
pub mod grid;
pub mod layout;
pub mod metrics;
pub mod payload;
pub mod qim;
pub mod scalar;

pub use error::{Error, Result};
pub use geometry::{AttackSpec, RstParams};
pub use grid::Grid;
pub use layout::{BlockLayout, BlockRole, ResizedLayout, CANVAS};
pub use payload::Payload;
pub use qim::QimConfig;
pub use scalar::Real;

pub type Grid32 = Grid<f32>;
pub type Grid64 = Grid<f64>;
pub type CurveletTransform64 = curvelet::CurveletTransform<f64>;
pub type QimCodec64 = qim::QimCodec<f64>;
