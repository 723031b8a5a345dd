use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::face::FaceState;
use super::render::{render_pair, SceneCameras, SceneConfig};
use crate::dataset::{self, PairedSequence, Splits};
use crate::error::{Error, Result};
use crate::geometry::RigidPose;

/// Expression and head-motion schedule of a synthetic recording.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpressionScript {
    /// Mean mouth oscillation frequency (cycles per frame).
    pub talk_rate: f64,
    /// Mean number of frames between blinks.
    pub blink_interval: f64,
    /// Gaze and brow drift frequency (cycles per frame).
    pub drift_rate: f64,
    /// Peak yaw/pitch/roll excursion (radians).
    pub pose_amplitude: [f64; 3],
    /// Peak translation excursion (scene units).
    pub translation_amplitude: [f64; 3],
    /// Head motion frequency (cycles per frame).
    pub pose_rate: f64,
    /// Largest allowed per-frame change of any state scalar.
    pub max_delta: f64,
}

impl Default for ExpressionScript {
    fn default() -> Self {
        Self {
            talk_rate: 0.06,
            blink_interval: 45.0,
            drift_rate: 0.01,
            pose_amplitude: [0.35, 0.18, 0.1],
            translation_amplitude: [0.1, 0.06, 0.1],
            pose_rate: 0.004,
            max_delta: 0.35,
        }
    }
}

impl ExpressionScript {
    /// Same expressions, head held still.
    pub fn static_pose() -> Self {
        Self {
            pose_amplitude: [0.0; 3],
            translation_amplitude: [0.0; 3],
            ..Self::default()
        }
    }
}

/// Smooth pseudo-random signal in roughly [-1, 1]: a sum of three sinusoids.
#[derive(Clone, Copy, Debug)]
struct Wave {
    freqs: [f64; 3],
    phases: [f64; 3],
}

impl Wave {
    fn new(rate: f64, rng: &mut impl Rng) -> Self {
        let mut freqs = [0.0; 3];
        let mut phases = [0.0; 3];
        for k in 0..3 {
            freqs[k] = rate * rng.random_range(0.5..1.6);
            phases[k] = rng.random_range(0.0..TAU);
        }
        Self { freqs, phases }
    }

    fn at(&self, t: f64) -> f64 {
        let w = [0.55, 0.3, 0.15];
        (0..3)
            .map(|k| w[k] * (TAU * self.freqs[k] * t + self.phases[k]).sin())
            .sum()
    }
}

fn step_towards(prev: f64, target: f64, max_delta: f64) -> f64 {
    prev + (target - prev).clamp(-max_delta, max_delta)
}

/// Generates a continuous state track: every scalar changes by at most `max_delta`
/// between consecutive frames.
pub fn generate_states(length: usize, script: &ExpressionScript, seed: u64) -> Vec<FaceState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mouth = Wave::new(script.talk_rate, &mut rng);
    let pause = Wave::new(script.talk_rate * 0.08, &mut rng);
    let gaze = [
        Wave::new(script.drift_rate, &mut rng),
        Wave::new(script.drift_rate, &mut rng),
    ];
    let brow = Wave::new(script.drift_rate * 0.7, &mut rng);
    let rot = [
        Wave::new(script.pose_rate, &mut rng),
        Wave::new(script.pose_rate, &mut rng),
        Wave::new(script.pose_rate, &mut rng),
    ];
    let trans = [
        Wave::new(script.pose_rate * 0.7, &mut rng),
        Wave::new(script.pose_rate * 0.7, &mut rng),
        Wave::new(script.pose_rate * 0.7, &mut rng),
    ];
    let blink_profile = [0.34, 0.67, 1.0, 1.0, 0.67, 0.34];
    let mut blink_at = rng.random_range(0.0..script.blink_interval) as usize;
    let mut blink_phase: Option<usize> = None;

    let md = script.max_delta;
    let mut states: Vec<FaceState> = Vec::with_capacity(length);
    for i in 0..length {
        let t = i as f64;
        if blink_phase.is_none() && i >= blink_at {
            blink_phase = Some(0);
            let gap: f64 = rng.random_range(0.5..1.5);
            blink_at = i + (gap * script.blink_interval) as usize + blink_profile.len();
        }
        let blink = match blink_phase {
            Some(p) if p < blink_profile.len() => {
                blink_phase = Some(p + 1);
                blink_profile[p]
            }
            _ => {
                blink_phase = None;
                0.0
            }
        };
        let talking = (pause.at(t) + 0.35).clamp(0.0, 1.0).min(1.0);
        let target = FaceState {
            mouth_open: (talking * (0.5 + 0.6 * mouth.at(t))).clamp(0.0, 1.0),
            blink_left: blink,
            blink_right: blink,
            gaze: [gaze[0].at(t), 0.6 * gaze[1].at(t)],
            brow_raise: (0.3 + 0.6 * brow.at(t)).clamp(0.0, 1.0),
            rigid_pose: RigidPose {
                rotation: [0, 1, 2].map(|k| script.pose_amplitude[k] * rot[k].at(t)),
                translation: [0, 1, 2].map(|k| script.translation_amplitude[k] * trans[k].at(t)),
            },
        }
        .clamped();
        let state = match states.last() {
            None => target,
            Some(prev) => FaceState {
                mouth_open: step_towards(prev.mouth_open, target.mouth_open, md),
                blink_left: step_towards(prev.blink_left, target.blink_left, md),
                blink_right: step_towards(prev.blink_right, target.blink_right, md),
                gaze: [
                    step_towards(prev.gaze[0], target.gaze[0], md),
                    step_towards(prev.gaze[1], target.gaze[1], md),
                ],
                brow_raise: step_towards(prev.brow_raise, target.brow_raise, md),
                rigid_pose: RigidPose {
                    rotation: [0, 1, 2].map(|k| {
                        step_towards(
                            prev.rigid_pose.rotation[k],
                            target.rigid_pose.rotation[k],
                            md,
                        )
                    }),
                    translation: [0, 1, 2].map(|k| {
                        step_towards(
                            prev.rigid_pose.translation[k],
                            target.rigid_pose.translation[k],
                            md,
                        )
                    }),
                },
            },
        };
        states.push(state);
    }
    states
}

/// A rendered synthetic recording together with its ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticSequence {
    pub sequence: PairedSequence,
    pub states: Vec<FaceState>,
    pub cameras: SceneCameras,
    pub scene: SceneConfig,
    pub script: ExpressionScript,
    pub seed: u64,
}

/// Renders a paired recording of `length` frames.
///
/// `window` is the model window size the sequence must support; `splits` defaults to
/// [`Splits::default_for`].
pub fn generate_sequence(
    length: usize,
    script: &ExpressionScript,
    scene: &SceneConfig,
    seed: u64,
    window: usize,
    splits: Option<Splits>,
) -> Result<SyntheticSequence> {
    if length < window.max(1) {
        return Err(Error::LengthTooShort {
            length,
            required: window.max(1),
        });
    }
    let splits = splits.unwrap_or_else(|| Splits::default_for(length));
    splits.validate(length)?;
    let cameras = scene.cameras()?;
    let states = generate_states(length, script, seed);
    for s in &states {
        s.rigid_pose.validate()?;
    }
    let mut ego_frames = Vec::with_capacity(length);
    let mut front_frames = Vec::with_capacity(length);
    let mut ego_mask = None;
    let mut front_masks = Vec::with_capacity(length);
    for s in &states {
        let r = render_pair(s, &cameras, scene)?;
        ego_frames.push(r.ego);
        front_frames.push(r.front);
        ego_mask.get_or_insert(r.ego_mask);
        front_masks.push(r.front_mask);
    }
    let sequence = PairedSequence {
        ego_frames,
        front_frames,
        ego_mask,
        front_masks: Some(front_masks),
        poses: states.iter().map(|s| s.rigid_pose).collect(),
        splits,
        ego_mouth_box: scene.ego_mouth_box(&cameras),
    };
    Ok(SyntheticSequence {
        sequence,
        states,
        cameras,
        scene: *scene,
        script: *script,
        seed,
    })
}

/// Structured description written next to a dataset sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub length: usize,
    pub splits: Splits,
    pub seed: u64,
    pub resolution: u32,
    pub cameras: SceneCameras,
    pub scene: SceneConfig,
    pub script: ExpressionScript,
    pub ego_mouth_box: Option<(u32, u32, u32, u32)>,
}

impl SyntheticSequence {
    pub fn manifest(&self) -> SequenceManifest {
        SequenceManifest {
            length: self.sequence.len(),
            splits: self.sequence.splits,
            seed: self.seed,
            resolution: self.scene.resolution,
            cameras: self.cameras,
            scene: self.scene,
            script: self.script,
            ego_mouth_box: self.sequence.ego_mouth_box,
        }
    }

    /// Writes the dataset layout under `dir` (frames, masks, `poses.csv`,
    /// `states.csv`, `manifest.json`).
    pub fn write(&self, dir: &Path) -> Result<()> {
        dataset::write_sequence(dir, &self.sequence)?;
        let manifest = serde_json::to_string_pretty(&self.manifest())?;
        let path = dir.join("manifest.json");
        std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
        let mut csv =
            String::from("frame,mouth_open,blink_left,blink_right,gaze_x,gaze_y,brow_raise\n");
        for (i, s) in self.states.iter().enumerate() {
            let e = s.expression();
            csv.push_str(&format!(
                "{i},{},{},{},{},{},{}\n",
                e[0], e[1], e[2], e[3], e[4], e[5]
            ));
        }
        let path = dir.join("states.csv");
        std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))
    }
}
