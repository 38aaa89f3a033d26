//! Stage networks, their optimizer and training loop, checkpoints and the
//! end-to-end reconstruction pipeline.

pub mod checkpoint;
pub mod net;
pub mod optim;
pub mod pipeline;
pub mod train;

pub use net::{Role, ToyNet};
pub use pipeline::{reconstruct, LdrInputs, Reconstruction, StageModel};
pub use train::{train, TrainConfig, TrainExample};
