//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{read_config, resolve, Overrides, Settings};
use crate::dynamic_mask::{window_variances, VarianceHistogram};
use crate::error::{Error, Result};
use crate::evaluation::evaluate;
use crate::geometry::CameraIntrinsics;
use crate::ingest::{load_sequence, Sequence};
use crate::mapping::export_ply;
use crate::pipeline::{map_from_trajectory, run, run_to_dir, write_sequence_masks};
use crate::raster::RgbImage;
use crate::resampler::{keypoints_to_csv, read_keypoints_csv, resample_keypoints_detailed, KeypointClass};
use crate::synthetic::{generate, SyntheticConfig};
use crate::trajectory::{Trajectory, DEFAULT_MAX_DIFF};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dynslam", version, about = "Dynamic-scene RGB-D masking, odometry and mapping")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Lower window-variance bound (m²)
    #[arg(long, global = true)]
    tau_a: Option<f64>,
    /// Upper window-variance bound (m²)
    #[arg(long, global = true)]
    tau_b: Option<f64>,
    /// Minimum depth used for cluster medians (m)
    #[arg(long, global = true)]
    tau_c: Option<f64>,
    /// Depth band around the cluster median (m)
    #[arg(long, global = true)]
    tau_d: Option<f64>,
    /// Raw depth units per meter
    #[arg(long, global = true)]
    depth_scale: Option<f32>,
    /// Pixel clustering radius
    #[arg(long, global = true)]
    pixel_eps: Option<f64>,
    /// Pixel clustering density threshold
    #[arg(long, global = true)]
    pixel_minpts: Option<usize>,
    /// Autoencoder training epochs
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Intrinsics file "fx fy cx cy" (default: <sequence>/intrinsics.txt)
    #[arg(long, global = true)]
    intrinsics: Option<PathBuf>,
    /// Directory of external dynamic masks merged into the prediction
    #[arg(long, global = true)]
    ext_mask_dir: Option<PathBuf>,
    /// Plain least squares instead of the Huber loss
    #[arg(long, global = true)]
    no_robust_loss: bool,
    /// Resample keypoints before pose estimation
    #[arg(long, global = true)]
    resample: bool,
    /// Initialize each frame's autoencoder from the previous one
    #[arg(long, global = true)]
    warm_start: bool,
    /// Disable dynamic masking
    #[arg(long, global = true)]
    no_mask: bool,
    /// Mask dilation radius before mapping (pixels)
    #[arg(long, global = true)]
    dilate: Option<usize>,
    /// Voxel size for map downsampling (m, 0 disables)
    #[arg(long, global = true)]
    voxel: Option<f64>,
    /// Pixel stride for map back-projection
    #[arg(long, global = true)]
    stride: Option<usize>,
    /// Worker thread cap
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write ASCII instead of binary PLY
    #[arg(long, global = true)]
    ascii_ply: bool,
    /// key = value settings file (command-line flags take precedence)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Predict per-frame dynamic masks
    Mask {
        sequence: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Histogram of window depth variances over a sequence (CSV)
    Hist {
        sequence: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        bins: usize,
        #[arg(long, default_value_t = 1e-9)]
        min: f64,
        #[arg(long, default_value_t = 1e-1)]
        max: f64,
    },
    /// Resample a keypoint CSV (x,y,d,theta,sigma,lambda)
    Resample {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Write an annotated overlay PNG
        #[arg(long)]
        overlay: Option<PathBuf>,
        /// Background image for the overlay
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Track a sequence and write a TUM trajectory
    Track {
        sequence: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Compare an estimated trajectory against ground truth
    Eval {
        estimate: PathBuf,
        groundtruth: PathBuf,
        /// RPE interval (s)
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        #[arg(long)]
        json: Option<PathBuf>,
        /// Per-pair error CSV
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Build a PLY map from a sequence and a trajectory
    Map {
        sequence: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Masks, tracking, mapping and evaluation in one run
    Pipeline {
        sequence: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Write the synthetic moving-box test sequence
    Synth {
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        frames: usize,
    },
}

impl GlobalArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            tau_a: self.tau_a,
            tau_b: self.tau_b,
            tau_c: self.tau_c,
            tau_d: self.tau_d,
            depth_scale: self.depth_scale,
            pixel_eps: self.pixel_eps,
            pixel_minpts: self.pixel_minpts,
            epochs: self.epochs,
            seed: self.seed,
            intrinsics: self.intrinsics.clone(),
            ext_mask_dir: self.ext_mask_dir.clone(),
            no_robust_loss: self.no_robust_loss,
            resample: self.resample,
            warm_start: self.warm_start,
            no_mask: self.no_mask,
            dilate: self.dilate,
            voxel: self.voxel,
            stride: self.stride,
            threads: self.threads,
            ascii_ply: self.ascii_ply,
        }
    }
}

#[derive(Serialize)]
struct RunConfig<'a> {
    command: &'a str,
    version: &'a str,
    settings: &'a Settings,
}

fn write_run_config(dir: &Path, command: &str, settings: &Settings) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(&RunConfig {
        command,
        version: env!("CARGO_PKG_VERSION"),
        settings,
    })
    .expect("settings serialize");
    let p = dir.join("run_config.json");
    fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn intrinsics(settings: &Settings, seq: &Path) -> Result<CameraIntrinsics> {
    let path = settings.intrinsics.clone().unwrap_or_else(|| seq.join("intrinsics.txt"));
    CameraIntrinsics::read(&path)
}

fn sequence(path: &Path) -> Result<Sequence> {
    let seq = load_sequence(path, DEFAULT_MAX_DIFF)?;
    if seq.skipped_lines > 0 {
        log::warn!("skipped {} malformed index lines", seq.skipped_lines);
    }
    Ok(seq)
}

/// Parses `argv` and runs the selected subcommand. Returns the exit code:
/// 0 on success, 1 on usage errors, 2 on data errors.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let settings = match cli
        .global
        .config
        .as_deref()
        .map(read_config)
        .transpose()
        .and_then(|file| resolve(&cli.global.overrides(), &file.unwrap_or_default()))
    {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    if let Some(n) = settings.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
    match execute(cli.command, &settings) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidParameter(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            }
        }
    }
}

fn execute(command: Command, settings: &Settings) -> Result<()> {
    let cfg = settings.pipeline_config();
    match command {
        Command::Mask { sequence: dir, out } => {
            let seq = sequence(&dir)?;
            let n = write_sequence_masks(&seq, &cfg, &out)?;
            write_run_config(&out, "mask", settings)?;
            println!("wrote masks for {n} frames to {}", out.display());
        }
        Command::Hist {
            sequence: dir,
            out,
            bins,
            min,
            max,
        } => {
            let seq = sequence(&dir)?;
            let mut hist = VarianceHistogram::new(min, max, bins)?;
            for f in &seq.frames {
                let depth = seq.read_depth(f, settings.depth_scale)?;
                for v in window_variances(&depth) {
                    hist.add(v);
                }
            }
            fs::write(&out, hist.to_csv(&cfg.mask.thresholds)).map_err(|e| Error::io(&out, e))?;
            write_run_config(&parent_dir(&out), "hist", settings)?;
        }
        Command::Resample {
            input,
            out,
            overlay,
            image,
        } => {
            let kps = read_keypoints_csv(&input)?;
            let outcome = resample_keypoints_detailed(&kps, &settings.resample_config(), None)?;
            let kept: Vec<_> = outcome.kept().into_iter().map(|i| kps[i]).collect();
            fs::write(&out, keypoints_to_csv(&kept)).map_err(|e| Error::io(&out, e))?;
            if let Some(path) = overlay {
                let base = image.as_deref().map(RgbImage::read).transpose()?;
                draw_overlay(base, &kps, &outcome.classes).write_png(&path)?;
            }
            write_run_config(&parent_dir(&out), "resample", settings)?;
            println!(
                "kept {} of {} keypoints ({} clusters, radius {:.6})",
                kept.len(),
                kps.len(),
                outcome.cluster_count,
                outcome.radius
            );
        }
        Command::Track { sequence: dir, out } => {
            let seq = sequence(&dir)?;
            let intr = intrinsics(settings, &dir)?;
            let cfg = crate::pipeline::PipelineConfig { mapping: false, ..cfg };
            let result = run(&seq, &intr, &cfg, None)?;
            result.trajectory.write_tum(&out)?;
            write_run_config(&parent_dir(&out), "track", settings)?;
            println!(
                "tracked {} frames ({} lost)",
                result.report.frames, result.report.lost_frames
            );
        }
        Command::Eval {
            estimate,
            groundtruth,
            delta,
            json,
            csv,
        } => {
            let (est, _) = Trajectory::read_tum(&estimate)?;
            let (gt, _) = Trajectory::read_tum(&groundtruth)?;
            let ev = evaluate(&est, &gt, delta, DEFAULT_MAX_DIFF)?;
            print!("{}", ev.report.to_table());
            if let Some(p) = json {
                let text = serde_json::to_string_pretty(&ev.report).expect("report serializes");
                fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))?;
            }
            if let Some(p) = csv {
                fs::write(&p, ev.per_pair_csv()).map_err(|e| Error::io(&p, e))?;
            }
        }
        Command::Map {
            sequence: dir,
            trajectory,
            out,
        } => {
            let seq = sequence(&dir)?;
            let intr = intrinsics(settings, &dir)?;
            let (traj, _) = Trajectory::read_tum(&trajectory)?;
            let cloud = map_from_trajectory(&seq, &traj, &intr, &cfg)?;
            export_ply(&cloud, &out, cfg.binary_ply)?;
            write_run_config(&parent_dir(&out), "map", settings)?;
            println!("wrote {} points to {}", cloud.len(), out.display());
        }
        Command::Pipeline { sequence: dir, out } => {
            let seq = sequence(&dir)?;
            let intr = intrinsics(settings, &dir)?;
            let result = run_to_dir(&seq, &intr, &cfg, &out)?;
            write_run_config(&out, "pipeline", settings)?;
            println!(
                "tracked {} frames ({} lost), map {} points",
                result.report.frames, result.report.lost_frames, result.report.map_points
            );
            if let Some(m) = &result.report.metrics {
                print!("{}", m.to_table());
            }
        }
        Command::Synth { out, frames } => {
            let seq = generate(&SyntheticConfig {
                frames,
                ..SyntheticConfig::default()
            })?;
            seq.write(&out)?;
            println!("wrote {frames} synthetic frames to {}", out.display());
        }
    }
    Ok(())
}

/// Green: untouched, blue: kept cluster member, red: removed.
fn draw_overlay(base: Option<RgbImage>, kps: &[crate::resampler::Keypoint], classes: &[KeypointClass]) -> RgbImage {
    let mut img = base.unwrap_or_else(|| {
        let w = kps.iter().map(|k| k.x).fold(0.0, f64::max) as usize + 8;
        let h = kps.iter().map(|k| k.y).fold(0.0, f64::max) as usize + 8;
        RgbImage::filled(w.max(16), h.max(16), [255, 255, 255])
    });
    for (k, class) in kps.iter().zip(classes) {
        let color = match class {
            KeypointClass::Uniform => [0, 200, 0],
            KeypointClass::ClusterKept => [0, 0, 255],
            KeypointClass::Removed => [255, 0, 0],
        };
        let (cx, cy) = (k.x.round() as i64, k.y.round() as i64);
        for dy in -2..=2i64 {
            for dx in -2..=2i64 {
                let (x, y) = (cx + dx, cy + dy);
                if x >= 0 && y >= 0 && (x as usize) < img.width() && (y as usize) < img.height() {
                    img.put(x as usize, y as usize, color);
                }
            }
        }
    }
    img
}
