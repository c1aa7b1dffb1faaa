//! Blind image watermarking with a learned synchronization template:
//! curvelet QIM payload, template-based RST recovery, arbitrary image sizes.

pub mod config;
pub mod error;
pub mod eval;
pub mod io;
pub mod pipeline;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use pipeline::{decode_image, embed_image, recover_image, DecodeReport, Recovery, StegoResult, Watermarker};

pub use wmsync_core as core;
pub use wmsync_nets as nets;

pub type StegoResult32 = StegoResult<f32>;
pub type StegoResult64 = StegoResult<f64>;
pub type DecodeReport32 = DecodeReport<f32>;
pub type DecodeReport64 = DecodeReport<f64>;
