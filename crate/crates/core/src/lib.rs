//! Dual-resolution image restoration network with normal and gradient priors,
//! its training loop and tiled evaluation.
//!
//! The core is generic over the scalar type; [`Model32`] is used for training
//! and inference, [`Model64`] for gradient checks.

pub mod checkpoint;
pub mod config;
pub mod data;
mod error;
pub mod eval;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod params;
pub mod pfi;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use config::{BlockAllocation, NetConfig, RunConfig, TrainConfig};
pub use data::{Batch, Example};
pub use error::{CoreError, Result};
pub use eval::{evaluate, restore, Tiling};
pub use loss::total_loss;
pub use model::{CostRow, Model, ModelOutput, Network};
pub use optim::{lr_at, AdamW};
pub use params::{Binding, Builder, ParamId, ParamStore};
pub use train::{TrainLog, TrainRecord, Trainer};

pub type Model32 = Model<f32>;
pub type Model64 = Model<f64>;
