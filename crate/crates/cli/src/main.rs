use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use egofront::conditioning::static_pose_track;
use egofront::dataset::{crop_resize, read_poses};
use egofront::eval::{benchmark_latency, sequence_report};
use egofront::image_util::{read_rgb_dir, write_rgb_dir};
use egofront::inference::{conditioning_for, prepare_ego, synthesize};
use egofront::synthgen::generate_sequence;
use egofront::trainer::{ablate, train_with_observer, TrainOutcome};
use egofront::{
    sync, AblationMode, ConditioningMode, Config, Error, ErrorCategory, ModelCheckpoint,
    PairedSequence, Result, RigidPose, RunManifest, SceneConfig, Selection, Split,
};

#[derive(Parser)]
#[command(
    name = "egofront",
    version,
    about = "Egocentric-to-frontal face video translation"
)]
struct Cli {
    /// TOML configuration; flags given on the command line take precedence.
    #[arg(long, global = true, env = "EGOFRONT_CONFIG")]
    config: Option<PathBuf>,
    /// Base directory for relative input paths.
    #[arg(long, global = true, env = "EGOFRONT_DATA_ROOT")]
    data_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic paired recording.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        length: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        resolution: Option<u32>,
        #[arg(long)]
        window: Option<usize>,
        /// Keep the head still (expression only).
        #[arg(long)]
        static_pose: bool,
    },
    /// Align two frame directories on their first flash frame and trim them.
    Sync {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Crop and resize every frame of a directory.
    Prepare {
        #[arg(long)]
        input: PathBuf,
        /// Crop box as `x,y,w,h`.
        #[arg(long)]
        crop: String,
        #[arg(long)]
        resolution: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Train one ablation variant of the configured model.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        mode: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Synthesize frontal frames with a trained checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory providing egocentric frames, mask and poses.
        #[arg(long, required_unless_present = "ego")]
        data: Option<PathBuf>,
        /// Egocentric frames used as is.
        #[arg(long, conflicts_with = "data")]
        ego: Option<PathBuf>,
        /// Pose CSV for `resample:` and `static:` conditioning.
        #[arg(long)]
        poses: Option<PathBuf>,
        /// `gt`, `resample:<start>`, `static:<frame>` or `none`.
        #[arg(long, default_value = "gt")]
        cond: String,
        /// `last` or `middle`.
        #[arg(long)]
        select: Option<String>,
        /// Restrict a dataset to one split.
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Photometric error of predicted frames against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Ground-truth frame matching the first prediction.
        #[arg(long, default_value_t = 0)]
        gt_offset: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-frame inference latency table.
    Bench {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        resolutions: Option<Vec<usize>>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        sequences: Option<usize>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        width_divisor: Option<usize>,
    },
}

#[derive(Args)]
struct TrainOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    width_divisor: Option<usize>,
    #[arg(long)]
    conditioning: Option<String>,
}

impl TrainOverrides {
    fn apply(&self, config: &mut Config) -> Result<()> {
        let t = &mut config.train;
        t.epochs = self.epochs.unwrap_or(t.epochs);
        t.window = self.window.unwrap_or(t.window);
        t.batch_size = self.batch_size.unwrap_or(t.batch_size);
        t.seed = self.seed.unwrap_or(t.seed);
        t.width_divisor = self.width_divisor.unwrap_or(t.width_divisor);
        if let Some(c) = &self.conditioning {
            t.conditioning = ConditioningMode::from_str(c)?;
        }
        config.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum CondSource {
    GroundTruth,
    Resample(usize),
    Static(usize),
    None,
}

impl FromStr for CondSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let index = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("bad frame index in --cond `{s}`")))
        };
        match s.split_once(':') {
            None if s == "gt" => Ok(CondSource::GroundTruth),
            None if s == "none" => Ok(CondSource::None),
            Some(("resample", v)) => Ok(CondSource::Resample(index(v)?)),
            Some(("static", v)) => Ok(CondSource::Static(index(v)?)),
            _ => Err(Error::InvalidConfig(format!(
                "unknown conditioning source `{s}`"
            ))),
        }
    }
}

fn parse_crop(s: &str) -> Result<(u32, u32, u32, u32)> {
    let v: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidConfig(format!("crop `{s}` is not x,y,w,h")))?;
    match v[..] {
        [x, y, w, h] => Ok((x, y, w, h)),
        _ => Err(Error::InvalidConfig(format!("crop `{s}` is not x,y,w,h"))),
    }
}

struct Context {
    config: Config,
    data_root: Option<PathBuf>,
}

impl Context {
    fn input(&self, p: &Path) -> PathBuf {
        match &self.data_root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }
}

/// Scene stored with a generated dataset, falling back to the configured one.
fn dataset_scene(dir: &Path, fallback: SceneConfig) -> Result<SceneConfig> {
    let path = dir.join("manifest.json");
    if !path.is_file() {
        return Ok(fallback);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    match v.get("scene") {
        Some(s) => Ok(serde_json::from_value(s.clone())?),
        None => Ok(fallback),
    }
}

fn write_training_outputs(
    out: &Path,
    outcome: &TrainOutcome,
    manifest: &mut RunManifest,
) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ckpt = out.join("checkpoint.bin");
    outcome.checkpoint.save(&ckpt)?;
    let log = out.join("train_log.csv");
    outcome.report.write_csv(&log)?;
    manifest.add_output(&ckpt)?;
    manifest.add_output(&log)?;
    Ok(())
}

fn run(cli: Cli, args: Vec<String>) -> Result<()> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let mut ctx = Context {
        config,
        data_root: cli.data_root,
    };
    let name = match &cli.command {
        Command::SynthData { .. } => "synth-data",
        Command::Sync { .. } => "sync",
        Command::Prepare { .. } => "prepare",
        Command::Train { .. } => "train",
        Command::Ablate { .. } => "ablate",
        Command::Infer { .. } => "infer",
        Command::Eval { .. } => "eval",
        Command::Bench { .. } => "bench",
    };
    let mut manifest = RunManifest::new(name, args);
    if let Some(p) = &cli.config {
        manifest.add_input(p)?;
    }

    let out = match cli.command {
        Command::SynthData {
            out,
            length,
            seed,
            resolution,
            window,
            static_pose,
        } => {
            let c = &mut ctx.config;
            let length = length.unwrap_or(c.data.length);
            c.data.length = length;
            let seed = seed.unwrap_or(c.data.seed);
            if let Some(r) = resolution {
                c.scene.resolution = r;
            }
            let script = if static_pose {
                egofront::ExpressionScript::static_pose()
            } else {
                c.script
            };
            let window = window.unwrap_or(c.train.window);
            let s = generate_sequence(
                length,
                &script,
                &c.scene,
                seed,
                window,
                Some(c.data.splits()?),
            )?;
            s.write(&out)?;
            manifest.seed = Some(seed);
            manifest.add_output(&out.join("ego"))?;
            manifest.add_output(&out.join("front"))?;
            manifest.add_output(&out.join("poses.csv"))?;
            println!("wrote {length} frame pairs to {}", out.display());
            out
        }
        Command::Sync {
            a,
            b,
            threshold,
            out,
        } => {
            let (a, b) = (ctx.input(&a), ctx.input(&b));
            let frames_a = read_rgb_dir(&a)?;
            let frames_b = read_rgb_dir(&b)?;
            manifest.add_input(&a)?;
            manifest.add_input(&b)?;
            let thr = threshold.unwrap_or(ctx.config.data.sync_threshold);
            let (offset, ta, tb) = sync::align_frames(&frames_a, &frames_b, thr)?;
            write_rgb_dir(&out.join("a"), &ta)?;
            write_rgb_dir(&out.join("b"), &tb)?;
            let path = out.join("sync.json");
            fs::write(&path, serde_json::to_string_pretty(&offset)?)
                .map_err(|e| Error::io(&path, e))?;
            manifest.add_output(&path)?;
            println!(
                "offset {} frames (confidence {:.3}), {} common frames",
                offset.offset_frames,
                offset.confidence,
                ta.len()
            );
            out
        }
        Command::Prepare {
            input,
            crop,
            resolution,
            out,
        } => {
            let input = ctx.input(&input);
            let crop = parse_crop(&crop)?;
            let frames = read_rgb_dir(&input)?;
            manifest.add_input(&input)?;
            let prepared = frames
                .iter()
                .map(|f| crop_resize(f, crop, resolution))
                .collect::<Result<Vec<_>>>()?;
            write_rgb_dir(&out, &prepared)?;
            manifest.add_output(&out)?;
            println!(
                "prepared {} frames at {resolution}x{resolution}",
                prepared.len()
            );
            out
        }
        Command::Train {
            data,
            out,
            overrides,
        } => {
            overrides.apply(&mut ctx.config)?;
            let data = ctx.input(&data);
            let seq = PairedSequence::load(&data, None)?;
            let scene = dataset_scene(&data, ctx.config.scene)?;
            manifest.add_input(&data)?;
            manifest.seed = Some(ctx.config.train.seed);
            let outcome = train_with_observer(&seq, &scene, &ctx.config.train, &mut |e| {
                println!(
                    "epoch {:>3}  loss_D {:.4}  loss_G {:.4}  val {:.4}",
                    e.epoch, e.loss_d, e.loss_g, e.val_score
                )
            })?;
            write_training_outputs(&out, &outcome, &mut manifest)?;
            println!(
                "best epoch {} (val {:.4})",
                outcome.report.best_epoch, outcome.checkpoint.validation_score
            );
            out
        }
        Command::Ablate {
            data,
            mode,
            out,
            overrides,
        } => {
            let mode = AblationMode::from_str(&mode)?;
            overrides.apply(&mut ctx.config)?;
            let data = ctx.input(&data);
            let seq = PairedSequence::load(&data, None)?;
            let scene = dataset_scene(&data, ctx.config.scene)?;
            manifest.add_input(&data)?;
            manifest.seed = Some(ctx.config.train.seed);
            let (outcome, tag) = ablate(&seq, &scene, &ctx.config.train, mode)?;
            let out = out.join(&tag);
            write_training_outputs(&out, &outcome, &mut manifest)?;
            println!(
                "{tag}: best epoch {} (val {:.4})",
                outcome.report.best_epoch, outcome.checkpoint.validation_score
            );
            out
        }
        Command::Infer {
            checkpoint,
            data,
            ego,
            poses,
            cond,
            select,
            split,
            out,
        } => {
            let cond = CondSource::from_str(&cond)?;
            let checkpoint_path = ctx.input(&checkpoint);
            let ckpt = ModelCheckpoint::load(&checkpoint_path, None)?;
            manifest.add_input(&checkpoint_path)?;
            let mut options = ctx.config.inference;
            if let Some(s) = select {
                options.selection = Selection::from_str(&s)?;
            }
            let (ego_frames, own_poses) = match (data, ego) {
                (Some(d), _) => {
                    let d = ctx.input(&d);
                    let seq = PairedSequence::load(&d, None)?;
                    manifest.add_input(&d)?;
                    let frames = prepare_ego(&ckpt, &seq)?;
                    let range = match split {
                        Some(s) => seq.split_range(Split::from_str(&s)?),
                        None => 0..seq.len(),
                    };
                    (
                        frames[range.clone()].to_vec(),
                        Some((seq.poses.clone(), range)),
                    )
                }
                (None, Some(e)) => {
                    let e = ctx.input(&e);
                    manifest.add_input(&e)?;
                    (read_rgb_dir(&e)?, None)
                }
                (None, None) => unreachable!("clap requires --data or --ego"),
            };
            let pose_source: Option<Vec<RigidPose>> = match &poses {
                Some(p) => Some(read_poses(&ctx.input(p))?),
                None => own_poses.as_ref().map(|(p, _)| p.clone()),
            };
            let need_poses = || {
                pose_source.clone().ok_or_else(|| {
                    Error::InvalidConfig("this --cond needs --data or --poses".into())
                })
            };
            let len = ego_frames.len();
            let track =
                match cond {
                    CondSource::None => None,
                    CondSource::GroundTruth => match &own_poses {
                        Some((p, range)) => Some(p[range.clone()].to_vec()),
                        None => Some(need_poses()?.into_iter().take(len).collect()),
                    },
                    CondSource::Resample(start) => Some(
                        egofront::conditioning::resample_pose_track(&need_poses()?, start, len)?,
                    ),
                    CondSource::Static(frame) => {
                        let p = need_poses()?;
                        let pose = *p.get(frame).ok_or(Error::IndexOutOfRange {
                            index: frame,
                            length: p.len(),
                        })?;
                        Some(static_pose_track(pose, len))
                    }
                };
            let cond_frames = match &track {
                Some(t) if t.len() != len => {
                    return Err(Error::LengthMismatch {
                        left: len,
                        right: t.len(),
                    })
                }
                Some(t) => Some(conditioning_for(&ckpt, t)?),
                None => None,
            };
            let frames = synthesize(&ego_frames, cond_frames.as_deref(), &ckpt, &options)?;
            write_rgb_dir(&out.join("frames"), &frames)?;
            if let Some(c) = &cond_frames {
                write_rgb_dir(&out.join("cond"), c)?;
            }
            manifest.add_output(&out.join("frames"))?;
            println!("synthesized {} frames", frames.len());
            out
        }
        Command::Eval {
            pred,
            gt,
            gt_offset,
            out,
        } => {
            let (pred, gt) = (ctx.input(&pred), ctx.input(&gt));
            let p = read_rgb_dir(&pred)?;
            let g = read_rgb_dir(&gt)?;
            manifest.add_input(&pred)?;
            manifest.add_input(&gt)?;
            let end = gt_offset + p.len();
            if end > g.len() {
                return Err(Error::LengthMismatch {
                    left: p.len(),
                    right: g.len().saturating_sub(gt_offset),
                });
            }
            let report = sequence_report(&p, &g[gt_offset..end])?;
            report.write(&out)?;
            manifest.add_output(&out.join("summary.json"))?;
            println!(
                "mean {:.4}  std {:.4}  over {} frames",
                report.mean,
                report.std,
                p.len()
            );
            out
        }
        Command::Bench {
            out,
            resolutions,
            frames,
            repeats,
            sequences,
            window,
            width_divisor,
        } => {
            let mut b = ctx.config.bench.clone();
            b.resolutions = resolutions.unwrap_or(b.resolutions);
            b.frames = frames.unwrap_or(b.frames);
            b.repeats = repeats.unwrap_or(b.repeats);
            b.sequences = sequences.unwrap_or(b.sequences);
            b.window = window.unwrap_or(b.window);
            b.width_divisor = width_divisor.unwrap_or(b.width_divisor);
            manifest.seed = Some(b.seed);
            let work = out.join("work");
            let table = benchmark_latency(&b, &work)?;
            fs::remove_dir_all(&work).map_err(|e| Error::io(&work, e))?;
            let md = out.join("latency.md");
            fs::write(&md, table.to_markdown()).map_err(|e| Error::io(&md, e))?;
            let json = out.join("latency.json");
            fs::write(&json, serde_json::to_string_pretty(&table)?)
                .map_err(|e| Error::io(&json, e))?;
            manifest.add_output(&json)?;
            print!("{}", table.to_markdown());
            out
        }
    };
    manifest.config_hash = Some(ctx.config.hash());
    manifest.write(&out.join("run_manifest.json"))
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli, args[1..].to_vec()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.category() {
                ErrorCategory::Usage => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Runtime => 4,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cond_sources() {
        assert_eq!(CondSource::from_str("gt").unwrap(), CondSource::GroundTruth);
        assert_eq!(CondSource::from_str("none").unwrap(), CondSource::None);
        assert_eq!(
            CondSource::from_str("resample:40").unwrap(),
            CondSource::Resample(40)
        );
        assert_eq!(
            CondSource::from_str("static:3").unwrap(),
            CondSource::Static(3)
        );
        assert!(CondSource::from_str("static:x").is_err());
        assert!(CondSource::from_str("landmarks").is_err());
    }

    #[test]
    fn crop_parsing() {
        assert_eq!(parse_crop("1, 2,3,4").unwrap(), (1, 2, 3, 4));
        assert!(parse_crop("1,2,3").is_err());
    }

    #[test]
    fn command_line_is_well_formed() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
