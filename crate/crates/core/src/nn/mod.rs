//! Sequential network engine: layers, tracing forward pass, gradient and
//! rule-modified backward passes, training, re-initialization, model files.

pub mod arch;
pub mod io;
pub mod layer;
mod network;
pub mod train;

pub use arch::{preset, OutputKind};
pub use io::{load, save};
pub use layer::{Conv2d, Dense, Layer, MaxPool2d, ReluRule};
pub use network::{ActivationTrace, InitScheme, LayerSpec, Network, ScoreTarget};
pub use train::{accuracy, train, Loss, Optimizer, TrainConfig, TrainReport};
