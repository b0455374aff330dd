//! Network construction: encoders, decoders, and the assembled segmentation models.

pub mod config;
pub mod decoder;
pub mod encoder;
pub mod layers;
pub mod network;
pub mod pretrained;

pub use config::{
    ActivationPolicy, AgdConfig, Architecture, Dims, EncoderFamily, EncoderSpec, NetworkConfig,
    NormPolicy, OutputMode,
};
pub use network::{build_baseline, build_encoder, build_model, Model, ModelOutputs, SegNet};
