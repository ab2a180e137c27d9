//! Segmentation networks and their objective.

pub mod config;
pub mod layers;
pub mod loss;
pub mod network;
pub mod tensor;

pub use config::{ModelConfig, Variant};
pub use loss::{kl_divergence, loss, reconstruction_loss, LatentSample, LatentStats};
pub use network::{Architecture, ForwardOutput, Mode, Network, ParamGroups};
pub use tensor::Real;
