//! Procedural paired data: a parametric head seen by a head-mounted fisheye camera
//! and a fixed frontal camera, with exact masks and ground-truth poses.

pub mod camera;
pub mod face;
pub mod render;
pub mod sequence;

pub use camera::{fisheye_project, FisheyeCamera, PinholeCamera, Projection};
pub use face::{FaceState, HeadModel};
pub use render::{
    render_pair, Background, RenderedPair, SceneCameras, SceneConfig, Shading,
    SUPPORTED_RESOLUTIONS,
};
pub use sequence::{
    generate_sequence, generate_states, ExpressionScript, SequenceManifest, SyntheticSequence,
};
