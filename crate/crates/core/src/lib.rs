//! Egocentric-to-frontal face video translation.
//!
//! The crate covers the whole pipeline: procedural paired data ([`synthgen`]),
//! transient-event synchronization ([`sync`]), sequence handling and windowing
//! ([`dataset`]), pose conditioning renderers ([`conditioning`]), the video U-Net
//! generator and temporal patch discriminator ([`model`]), the training objective
//! ([`losses`]), adversarial training ([`trainer`]), sliding-window synthesis
//! ([`inference`]) and photometric/latency evaluation ([`eval`]).

pub mod conditioning;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image_util;
pub mod inference;
pub mod losses;
pub mod manifest;
pub mod model;
pub mod nn;
pub mod sync;
pub mod synthgen;
pub mod tensor;
pub mod trainer;

pub use conditioning::ConditioningMode;
pub use config::Config;
pub use dataset::{PairedSequence, Split, Splits};
pub use error::{Error, ErrorCategory, Result};
pub use geometry::RigidPose;
pub use inference::{InferenceOptions, Selection};
pub use losses::{ExtractorId, LossWeights};
pub use manifest::RunManifest;
pub use model::{Discriminator, Generator, ModelCheckpoint};
pub use synthgen::{ExpressionScript, SceneConfig};
pub use tensor::{Scalar, Tensor};
pub use trainer::{AblationMode, TrainConfig};
