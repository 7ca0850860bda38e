//! The scoring network: architecture presets, forward/backward over a
//! stitched pair, and checkpoint persistence.

mod checkpoint;
mod config;
mod network;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, StoredArray, FORMAT_VERSION, MAGIC};
pub use config::{LayerSpec, NetworkConfig, Preset, INPUT_CHANNELS};
pub use network::{build_network, ForwardCache, Gradients, Init, Network, TrainingMeta};
