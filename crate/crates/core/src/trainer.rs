//! Alternating adversarial training with validation-based checkpoint selection,
//! and the ablation matrix.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::{ConditioningMode, ConditioningSpec};
use crate::dataset::{PairedSequence, Split};
use crate::error::{Error, Result};
use crate::losses::{
    content_loss, content_loss_grad, discriminator_loss_grad, generator_adversarial_grad,
    generator_adversarial_loss, perceptual_loss, perceptual_loss_grad, total_generator_objective,
    ExtractorId, FeatureExtractor, LossWeights,
};
use crate::model::{
    Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, ModelCheckpoint, OptimizerState,
};
use crate::nn::{Adam, AdamConfig, Parameterized};
use crate::synthgen::SceneConfig;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub first_moment_decay: f64,
    pub second_moment_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Frames per window (N).
    pub window: usize,
    /// Expected frame resolution; `None` accepts the dataset's.
    pub resolution: Option<u32>,
    pub conditioning: ConditioningMode,
    pub remove_ego_bg: bool,
    pub use_perceptual: bool,
    pub extractor: ExtractorId,
    pub weights: LossWeights,
    pub seed: u64,
    /// Use only the first `train_frames` frames of the training split.
    pub train_frames: Option<usize>,
    /// Divides every layer width of both networks.
    pub width_divisor: usize,
    pub disc_depth: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            first_moment_decay: 0.5,
            second_moment_decay: 0.999,
            batch_size: 12,
            epochs: 100,
            window: 11,
            resolution: None,
            conditioning: ConditioningMode::NeutralHead,
            remove_ego_bg: true,
            use_perceptual: true,
            extractor: ExtractorId::FaceFeatures,
            weights: LossWeights::default(),
            seed: 0,
            train_frames: None,
            width_divisor: 1,
            disc_depth: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.lr > 0.0
            && (0.0..1.0).contains(&self.first_moment_decay)
            && (0.0..1.0).contains(&self.second_moment_decay)
            && self.batch_size > 0
            && self.window > 0
            && self.width_divisor > 0
            && self.disc_depth > 0;
        if !positive {
            return Err(Error::InvalidConfig(format!(
                "hyperparameters must be positive: {self:?}"
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        self.weights.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.first_moment_decay,
            beta2: self.second_moment_decay,
            ..AdamConfig::default()
        }
    }

    pub fn network_configs(
        &self,
        resolution: usize,
    ) -> Result<(GeneratorConfig, DiscriminatorConfig)> {
        let g =
            GeneratorConfig::for_resolution(resolution, self.window)?.narrowed(self.width_divisor);
        let mut d = DiscriminatorConfig::new(self.window).narrowed(self.width_divisor);
        d.channels = (0..self.disc_depth)
            .map(|i| d.channels[i.min(d.channels.len() - 1)])
            .collect();
        g.validate()?;
        d.validate()?;
        if d.output_resolution(resolution) == 0 {
            return Err(Error::InvalidConfig(format!(
                "discriminator depth {} too deep for {resolution}px",
                self.disc_depth
            )));
        }
        Ok((g, d))
    }

    /// Content-loss weight actually used (perceptual term may be disabled).
    pub fn effective_weights(&self) -> LossWeights {
        LossWeights {
            lambda2: if self.use_perceptual {
                self.weights.lambda2
            } else {
                0.0
            },
            ..self.weights
        }
    }
}

/// Normalized per-frame buffers (`3 * H * W`, values in [-1, 1]).
#[derive(Clone, Debug)]
pub struct FrameStore {
    frames: Vec<Vec<f32>>,
    height: usize,
    width: usize,
}

impl FrameStore {
    pub fn new(frames: &[RgbImage]) -> Self {
        let (w, h) = frames.first().map(|f| f.dimensions()).unwrap_or((0, 0));
        let plane = (w * h) as usize;
        let frames = frames
            .iter()
            .map(|f| {
                let mut v = vec![0.0f32; 3 * plane];
                for (i, p) in f.pixels().enumerate() {
                    for c in 0..3 {
                        v[c * plane + i] = p[c] as f32 / 127.5 - 1.0;
                    }
                }
                v
            })
            .collect();
        Self {
            frames,
            height: h as usize,
            width: w as usize,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `[starts.len(), 3N, H, W]` batch of the windows beginning at `starts`.
    pub fn batch(&self, starts: &[usize], n: usize) -> Tensor<f32> {
        let frame_len = 3 * self.height * self.width;
        let mut data = Vec::with_capacity(starts.len() * n * frame_len);
        for &s in starts {
            for f in &self.frames[s..s + n] {
                data.extend_from_slice(f);
            }
        }
        Tensor::from_vec([starts.len(), 3 * n, self.height, self.width], data)
            .expect("consistent frame sizes")
    }
}

/// Model-ready streams: egocentric input, conditioning and frontal target.
#[derive(Clone, Debug)]
pub struct Streams {
    pub ego: FrameStore,
    pub cond: FrameStore,
    pub target: FrameStore,
}

/// Applies the configured masks and renders the conditioning track.
pub fn prepare_frames(
    seq: &PairedSequence,
    scene: &SceneConfig,
    mode: ConditioningMode,
    remove_ego_bg: bool,
) -> Result<(Vec<RgbImage>, Vec<RgbImage>, Vec<RgbImage>)> {
    let masked = seq.apply_masks(remove_ego_bg)?;
    let res = seq.resolution().0;
    let cond = ConditioningSpec::new(mode, *scene, seq.poses.clone()).render_track(res);
    Ok((masked.ego_frames, cond, masked.front_frames))
}

impl Streams {
    pub fn prepare(
        seq: &PairedSequence,
        scene: &SceneConfig,
        mode: ConditioningMode,
        remove_ego_bg: bool,
    ) -> Result<Self> {
        let (ego, cond, target) = prepare_frames(seq, scene, mode, remove_ego_bg)?;
        Ok(Self {
            ego: FrameStore::new(&ego),
            cond: FrameStore::new(&cond),
            target: FrameStore::new(&target),
        })
    }

    /// Generator input `[B, 6N, H, W]` and target `[B, 3N, H, W]`.
    pub fn batch(&self, starts: &[usize], n: usize) -> (Tensor<f32>, Tensor<f32>) {
        let input = Tensor::cat_channels(&self.ego.batch(starts, n), &self.cond.batch(starts, n));
        (input, self.target.batch(starts, n))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub val_score: f64,
    pub val_content: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Validation score of the freshly initialized networks.
    pub initial_val_score: f64,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss_D,loss_G,val_score,val_content\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.loss_d, e.loss_g, e.val_score, e.val_content
            ));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

pub struct TrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub report: TrainReport,
}

/// Metadata stored in every checkpoint so inference can rebuild the inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub train_config: TrainConfig,
    pub scene: SceneConfig,
}

impl RunMetadata {
    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        serde_json::from_value(ckpt.metadata.clone()).map_err(|e| {
            Error::InvalidData(format!("checkpoint metadata is not a training record: {e}"))
        })
    }
}

struct Evaluation {
    score: f64,
    content: f64,
}

const EVAL_BATCH: usize = 16;

/// Mean generator objective (with the current discriminator) over `starts`.
fn evaluate(
    g: &Generator<f32>,
    d: &Discriminator<f32>,
    extractor: Option<&FeatureExtractor<f32>>,
    streams: &Streams,
    starts: &[usize],
    n: usize,
    weights: &LossWeights,
) -> Result<Evaluation> {
    let (mut score, mut content, mut count) = (0.0, 0.0, 0usize);
    for chunk in starts.chunks(EVAL_BATCH) {
        let (input, target) = streams.batch(chunk, n);
        let fake = g.forward(&input)?;
        let logits = d.forward(&input, &fake)?;
        let adv = generator_adversarial_loss(&logits)?;
        let c = content_loss(&fake, &target)?;
        let p = match extractor {
            Some(e) => perceptual_loss(&fake, &target, e)?,
            None => 0.0,
        };
        let k = chunk.len() as f64;
        score += k * total_generator_objective(adv as f64, c as f64, p as f64, weights);
        content += k * c as f64;
        count += chunk.len();
    }
    Ok(Evaluation {
        score: score / count as f64,
        content: content / count as f64,
    })
}

fn non_finite(epoch: usize, batch: usize, what: &str, value: f64) -> Error {
    Error::NonFiniteLoss {
        epoch,
        batch,
        detail: format!("{what} = {value}"),
    }
}

fn init_networks(
    config: &TrainConfig,
    resolution: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Generator<f32>, Discriminator<f32>)> {
    let (gc, dc) = config.network_configs(resolution)?;
    Ok((Generator::new(gc, rng)?, Discriminator::new(dc, rng)?))
}

fn run_metadata(scene: &SceneConfig, config: &TrainConfig) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(RunMetadata {
        train_config: config.clone(),
        scene: *scene,
    })?)
}

/// The networks a training run with `config` starts from, packaged as a checkpoint.
pub fn initial_checkpoint(
    resolution: usize,
    scene: &SceneConfig,
    config: &TrainConfig,
) -> Result<ModelCheckpoint> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (generator, discriminator) = init_networks(config, resolution, &mut rng)?;
    Ok(ModelCheckpoint {
        generator,
        discriminator,
        optimizer: None,
        epoch: 0,
        validation_score: f64::INFINITY,
        metadata: run_metadata(scene, config)?,
    })
}

/// Trains on the training split and keeps the epoch with the lowest validation
/// objective. `on_epoch` observes every epoch log.
pub fn train_with_observer(
    seq: &PairedSequence,
    scene: &SceneConfig,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    seq.validate()?;
    let (res_w, res_h) = seq.resolution();
    if res_w != res_h {
        return Err(Error::InvalidData(format!(
            "frames must be square, got {res_w}x{res_h}"
        )));
    }
    if let Some(r) = config.resolution {
        if r != res_w {
            return Err(Error::InvalidConfig(format!(
                "config expects {r}px frames, dataset has {res_w}px"
            )));
        }
    }
    let n = config.window;
    let train_range = seq.split_range(Split::Train);
    let train_len = config
        .train_frames
        .map_or(train_range.len(), |f| f.min(train_range.len()));
    let val_range = seq.split_range(Split::Val);
    if train_len < n || val_range.len() < n {
        return Err(Error::DatasetTooSmall(format!(
            "{train_len} training and {} validation frames for windows of {n}",
            val_range.len()
        )));
    }
    let train_starts: Vec<usize> =
        (train_range.start..train_range.start + train_len - n + 1).collect();
    let val_starts: Vec<usize> = (val_range.start..val_range.end - n + 1).collect();

    let streams = Streams::prepare(seq, scene, config.conditioning, config.remove_ego_bg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut g, mut d) = init_networks(config, res_w as usize, &mut rng)?;
    let mut adam_g = Adam::new(config.adam(), &g.params());
    let mut adam_d = Adam::new(config.adam(), &d.params());
    let extractor = config
        .use_perceptual
        .then(|| FeatureExtractor::<f32>::new(config.extractor));
    let weights = config.effective_weights();
    let (l1, l2) = (weights.lambda1 as f32, weights.lambda2 as f32);

    let initial = evaluate(
        &g,
        &d,
        extractor.as_ref(),
        &streams,
        &val_starts,
        n,
        &weights,
    )?;
    let mut best = ModelCheckpoint {
        generator: g.clone(),
        discriminator: d.clone(),
        optimizer: None,
        epoch: 0,
        validation_score: f64::INFINITY,
        metadata: run_metadata(scene, config)?,
    };
    let mut logs = Vec::with_capacity(config.epochs);
    let mut order = train_starts.clone();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut sum_d, mut sum_g, mut batches) = (0.0, 0.0, 0usize);
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let (input, target) = streams.batch(chunk, n);
            let (fake, g_trace) = g.forward_train(&input)?;

            // discriminator step
            d.zero_grad();
            let (real_logits, real_trace) = d.forward_train(&input, &target)?;
            let (fake_logits, fake_trace) = d.forward_train(&input, &fake)?;
            let (loss_d, d_real, d_fake) = discriminator_loss_grad(&real_logits, &fake_logits)
                .map_err(|_| non_finite(epoch, bi, "discriminator logits", f64::NAN))?;
            if !loss_d.is_finite() {
                return Err(non_finite(epoch, bi, "loss_D", loss_d as f64));
            }
            d.backward(&real_trace, &d_real, true);
            d.backward(&fake_trace, &d_fake, true);
            adam_d.step(&mut d.params_mut());

            // generator step against the updated discriminator
            let (fake_logits, fake_trace) = d.forward_train(&input, &fake)?;
            let (adv, d_logits) = generator_adversarial_grad(&fake_logits)
                .map_err(|_| non_finite(epoch, bi, "generator logits", f64::NAN))?;
            let mut d_fake = d.backward(&fake_trace, &d_logits, false);
            let (content, d_content) = content_loss_grad(&fake, &target)?;
            d_fake.add_assign(&d_content.map(|v| v * l1));
            let mut perceptual = 0.0;
            if let Some(e) = &extractor {
                let (p, d_p) = perceptual_loss_grad(&fake, &target, e)?;
                perceptual = p;
                d_fake.add_assign(&d_p.map(|v| v * l2));
            }
            let loss_g =
                total_generator_objective(adv as f64, content as f64, perceptual as f64, &weights);
            if !loss_g.is_finite() {
                return Err(non_finite(epoch, bi, "loss_G", loss_g));
            }
            g.zero_grad();
            g.backward(&g_trace, &d_fake);
            adam_g.step(&mut g.params_mut());

            sum_d += loss_d as f64;
            sum_g += loss_g;
            batches += 1;
        }
        let eval = evaluate(
            &g,
            &d,
            extractor.as_ref(),
            &streams,
            &val_starts,
            n,
            &weights,
        )?;
        if !eval.score.is_finite() {
            return Err(non_finite(epoch, batches, "validation score", eval.score));
        }
        let log = EpochLog {
            epoch,
            loss_d: sum_d / batches as f64,
            loss_g: sum_g / batches as f64,
            val_score: eval.score,
            val_content: eval.content,
        };
        on_epoch(&log);
        logs.push(log);
        if eval.score < best.validation_score {
            best.generator = g.clone();
            best.discriminator = d.clone();
            best.optimizer = Some(OptimizerState {
                generator: adam_g.clone(),
                discriminator: adam_d.clone(),
            });
            best.epoch = epoch;
            best.validation_score = eval.score;
        }
    }
    let report = TrainReport {
        initial_val_score: initial.score,
        epochs: logs,
        best_epoch: best.epoch,
    };
    Ok(TrainOutcome {
        checkpoint: best,
        report,
    })
}

pub fn train(
    seq: &PairedSequence,
    scene: &SceneConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_observer(seq, scene, config, &mut |_| {})
}

/// Single-toggle variants of a base training configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    NoPoseCond,
    PoseCondNoEgoBgRemoval,
    NoPerceptual,
    ExtractorSwap,
    LandmarksCond,
    ContoursCond,
    TrainSize5000,
    TrainSize2500,
    SingleFrameNoCond,
}

impl AblationMode {
    pub const ALL: [AblationMode; 9] = [
        AblationMode::NoPoseCond,
        AblationMode::PoseCondNoEgoBgRemoval,
        AblationMode::NoPerceptual,
        AblationMode::ExtractorSwap,
        AblationMode::LandmarksCond,
        AblationMode::ContoursCond,
        AblationMode::TrainSize5000,
        AblationMode::TrainSize2500,
        AblationMode::SingleFrameNoCond,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AblationMode::NoPoseCond => "no_pose_cond",
            AblationMode::PoseCondNoEgoBgRemoval => "pose_cond_no_ego_bg_removal",
            AblationMode::NoPerceptual => "no_perceptual",
            AblationMode::ExtractorSwap => "extractor_swap",
            AblationMode::LandmarksCond => "landmarks_cond",
            AblationMode::ContoursCond => "contours_cond",
            AblationMode::TrainSize5000 => "train_size_5000",
            AblationMode::TrainSize2500 => "train_size_2500",
            AblationMode::SingleFrameNoCond => "single_frame_no_cond",
        }
    }

    /// Report tag combining the mode and the base seed.
    pub fn report_tag(&self, base: &TrainConfig) -> String {
        format!("ablation-{}-seed{}", self.as_str(), base.seed)
    }

    /// The base configuration with this mode's toggle flipped. Training-size modes
    /// keep the 7500 : 5000 : 2500 ratio relative to `full_train_frames`.
    pub fn apply(&self, base: &TrainConfig, full_train_frames: usize) -> TrainConfig {
        let mut c = base.clone();
        match self {
            AblationMode::NoPoseCond => c.conditioning = ConditioningMode::None,
            AblationMode::PoseCondNoEgoBgRemoval => c.remove_ego_bg = false,
            AblationMode::NoPerceptual => c.use_perceptual = false,
            AblationMode::ExtractorSwap => {
                c.extractor = match base.extractor {
                    ExtractorId::FaceFeatures => ExtractorId::GenericFeatures,
                    ExtractorId::GenericFeatures => ExtractorId::FaceFeatures,
                }
            }
            AblationMode::LandmarksCond => c.conditioning = ConditioningMode::Landmarks,
            AblationMode::ContoursCond => c.conditioning = ConditioningMode::Contours,
            AblationMode::TrainSize5000 => c.train_frames = Some(full_train_frames * 5000 / 7500),
            AblationMode::TrainSize2500 => c.train_frames = Some(full_train_frames * 2500 / 7500),
            AblationMode::SingleFrameNoCond => {
                c.window = 1;
                c.conditioning = ConditioningMode::None;
            }
        }
        c
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::UnknownMode(s.to_string()))
    }
}

/// Trains the `mode` variant of `base` and returns its checkpoint and report tag.
pub fn ablate(
    seq: &PairedSequence,
    scene: &SceneConfig,
    base: &TrainConfig,
    mode: AblationMode,
) -> Result<(TrainOutcome, String)> {
    let full = seq.split_range(Split::Train).len();
    let config = mode.apply(base, base.train_frames.unwrap_or(full));
    Ok((train(seq, scene, &config)?, mode.report_tag(base)))
}
