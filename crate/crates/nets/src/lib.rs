//! Template generator, extractor and matcher networks with their training
//! loops. Everything is generic over the scalar type; training normally
//! runs in `f32`, gradient checks in `f64`.

pub mod error;
pub mod layers;
pub mod loss;
pub mod model;
pub mod networks;
pub mod optim;
pub mod train;

pub use error::{Error, Result};
pub use model::{EpochStats, NetConfig, PretrainReport, TemplateModel, TrainMeta, DEFAULT_LAMBDA};
pub use train::{train_model, Objective, TrainConfig, TrainReport};

pub type TemplateModel32 = TemplateModel<f32>;
pub type TemplateModel64 = TemplateModel<f64>;
