//! Video U-Net generator, temporal patch discriminator and their checkpoint format.

mod checkpoint;
mod discriminator;
mod generator;

pub use checkpoint::{config_hash, ModelCheckpoint, OptimizerState, CHECKPOINT_VERSION};
pub use discriminator::{
    Discriminator, DiscriminatorConfig, DiscriminatorTrace, DEFAULT_DISC_CHANNELS,
};
pub use generator::{
    Generator, GeneratorConfig, GeneratorTrace, ENCODER_SLOPE, INIT_STD, INNERMOST_RESOLUTION,
    PAPER_LEVEL_CHANNELS,
};
