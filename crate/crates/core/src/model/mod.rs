//! Network presets, forward inference and the weights file.

mod config;
mod network;
mod weights;

pub use config::{LayerKind, LayerSpec, NetworkConfig, Variant, CANONICAL_BASE_FILTERS};
pub use network::{build_network, squash_head, HeadLayout, Network, SIZE_LOGIT_LIMIT};
pub use weights::{load_weights, read_weights, save_weights, write_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};
