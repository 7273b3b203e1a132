//! Layers, parameter storage, optimizer, and checkpoints.

mod adam;
mod checkpoint;
mod layers;
mod params;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use layers::{Conv1d, Dropout, Linear, Lstm, FORGET_BIAS};
pub use params::{ParamId, ParamVars, ParameterStore};
