//! The segmentation network: configuration, parameters, forward/backward
//! passes and checkpoints.

mod checkpoint;
mod config;
mod network;
mod params;
mod zxyformer;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use config::ModelConfig;
pub use network::{build_network, forward_backward, network_forward, Bound, HeadNodes, HeadSeeds, PredictionPair};
pub use params::{
    init_parameters, parameter_shapes, truncated_normal, NetworkParameters, INIT_STD, INIT_TRUNCATION,
    OFFSET_CHANNELS,
};
pub use zxyformer::{deformable_conv3d, drct_attention, zxyformer_block, DrctNodes};
