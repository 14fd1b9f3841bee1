//! Feed-forward network engine with exact reverse-mode gradients.
//!
//! Base weights can be frozen per layer; low-rank adapters attached to a
//! layer add `scale · B·A` to its weight. Only unfrozen parameters receive
//! gradient entries, so an optimizer step can never touch frozen weights.

mod checkpoint;
mod layer;
mod network;
mod optim;

pub use checkpoint::{ArchLayer, Checkpoint, CheckpointFile, CHECKPOINT_VERSION};
pub use layer::{Activation, DenseLayer, LoraAdapter};
pub use network::{Gradients, Network, ParamId};
pub use optim::{Optimizer, UpdateRule};
