//! Sequence-level driver: masks, tracking, mapping and evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamic_mask::{dilate, predict_masks, FrameMasks, MaskParams};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, Evaluation, MetricReport};
use crate::geometry::{CameraIntrinsics, Se3Pose};
use crate::ingest::{FrameRecord, Sequence};
use crate::mapping::{export_ply, frame_to_cloud, ColoredPointCloud, MapAccumulator, MapConfig};
use crate::raster::{BinaryMask, DepthImage, GrayImage, RgbImage, DEFAULT_DEPTH_SCALE};
use crate::tracking::{track_frame, FrameInput, FrameTrack, TrackConfig, TrackerState};
use crate::trajectory::{Trajectory, DEFAULT_MAX_DIFF};

/// Frames loaded and masked together before the sequential tracking step.
const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Predict dynamic masks; when off, every pixel counts as static.
    pub masking: bool,
    pub mask: MaskParams,
    /// Directory of externally supplied masks, one `<timestamp>.png` (or
    /// the RGB file name) per frame.
    pub ext_mask_dir: Option<PathBuf>,
    /// Mask dilation radius applied before mapping, pixels.
    pub dilate: usize,
    pub depth_scale: f32,
    pub max_diff: f64,
    pub track: TrackConfig,
    pub map: MapConfig,
    pub voxel: f64,
    pub binary_ply: bool,
    pub rpe_delta: f64,
    /// Build the point-cloud map alongside tracking.
    pub mapping: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            masking: true,
            mask: MaskParams::default(),
            ext_mask_dir: None,
            dilate: 3,
            depth_scale: DEFAULT_DEPTH_SCALE,
            max_diff: DEFAULT_MAX_DIFF,
            track: TrackConfig::default(),
            map: MapConfig::default(),
            voxel: 0.01,
            binary_ply: true,
            rpe_delta: 1.0,
            mapping: true,
        }
    }
}

/// Per-frame decoded images plus masks.
pub struct LoadedFrame {
    pub timestamp: f64,
    pub rgb: RgbImage,
    pub gray: GrayImage,
    pub depth: DepthImage,
    pub masks: Option<FrameMasks>,
}

fn external_mask(dir: &Path, frame: &FrameRecord) -> Result<Option<BinaryMask>> {
    let mut candidates = vec![dir.join(format!("{:.6}.png", frame.timestamp))];
    if let Some(name) = frame.rgb_path.file_name() {
        candidates.push(dir.join(name));
    }
    for c in candidates {
        if c.is_file() {
            return BinaryMask::read(&c).map(Some);
        }
    }
    log::warn!("no external mask for frame {:.6}", frame.timestamp);
    Ok(None)
}

/// Reads and masks one frame.
pub fn load_frame(seq: &Sequence, frame: &FrameRecord, cfg: &PipelineConfig) -> Result<LoadedFrame> {
    let rgb = seq.read_rgb(frame)?;
    let depth = seq.read_depth(frame, cfg.depth_scale)?;
    if (rgb.width(), rgb.height()) != (depth.width(), depth.height()) {
        return Err(Error::dims((depth.width(), depth.height()), (rgb.width(), rgb.height())));
    }
    let masks = if cfg.masking {
        let ext = match &cfg.ext_mask_dir {
            Some(dir) => external_mask(dir, frame)?,
            None => None,
        };
        Some(predict_masks(&depth, ext.as_ref(), &cfg.mask)?)
    } else {
        None
    };
    Ok(LoadedFrame {
        timestamp: frame.timestamp,
        gray: rgb.to_gray(),
        rgb,
        depth,
        masks,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameSummary {
    pub timestamp: f64,
    pub keypoints: usize,
    pub correspondences: usize,
    pub selected: usize,
    pub inliers: usize,
    pub lost: bool,
    pub mask_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub frames: usize,
    pub lost_frames: usize,
    pub map_points: usize,
    pub metrics: Option<MetricReport>,
    pub per_frame: Vec<FrameSummary>,
}

pub struct PipelineOutput {
    pub trajectory: Trajectory,
    pub cloud: ColoredPointCloud,
    pub report: PipelineReport,
    pub evaluation: Option<Evaluation>,
}

fn write_masks(dir: &Path, f: &LoadedFrame) -> Result<()> {
    let Some(m) = &f.masks else { return Ok(()) };
    let name = format!("{:.6}.png", f.timestamp);
    m.m_depth.write_png(&dir.join("m_depth").join(&name))?;
    m.m_broad.write_png(&dir.join("m_broad").join(&name))?;
    m.m_c.write_png(&dir.join("m_c").join(&name))
}

fn mask_fraction(f: &LoadedFrame) -> f64 {
    f.masks
        .as_ref()
        .map_or(0.0, |m| m.m_c.count_ones() as f64 / (m.m_c.width() * m.m_c.height()) as f64)
}

/// Runs masks, tracking and mapping over `seq`. When `out_dir` is given, the
/// mask PNGs are written under `m_depth/`, `m_broad/` and `m_c/`.
pub fn run(
    seq: &Sequence,
    intr: &CameraIntrinsics,
    cfg: &PipelineConfig,
    out_dir: Option<&Path>,
) -> Result<PipelineOutput> {
    cfg.mask.validate()?;
    intr.validate()?;
    if let Some(dir) = out_dir.filter(|_| cfg.masking) {
        create_mask_dirs(dir)?;
    }

    let mut state = TrackerState::default();
    let mut pose = Se3Pose::identity();
    let mut samples = Vec::with_capacity(seq.frames.len());
    let mut per_frame = Vec::with_capacity(seq.frames.len());
    let mut map = MapAccumulator::new(cfg.voxel)?;
    let mut prev: Option<LoadedFrame> = None;

    for chunk in seq.frames.chunks(CHUNK) {
        let loaded = chunk
            .par_iter()
            .map(|f| load_frame(seq, f, cfg))
            .collect::<Result<Vec<_>>>()?;
        let mut poses = Vec::with_capacity(loaded.len());
        for (i, cur) in loaded.iter().enumerate() {
            let before = if i == 0 { prev.as_ref() } else { Some(&loaded[i - 1]) };
            let track = match before {
                None => FrameTrack {
                    relative: Se3Pose::identity(),
                    keypoints: 0,
                    correspondences: 0,
                    selected: 0,
                    inliers: 0,
                    lost: false,
                },
                Some(p) => {
                    let a = FrameInput {
                        gray: &p.gray,
                        depth: &p.depth,
                        mask: p.masks.as_ref().map(|m| &m.m_c),
                    };
                    let b = FrameInput {
                        gray: &cur.gray,
                        depth: &cur.depth,
                        mask: cur.masks.as_ref().map(|m| &m.m_c),
                    };
                    let t = track_frame(&a, &b, intr, &cfg.track, &mut state)?;
                    pose = pose.compose(&t.relative.inverse());
                    t
                }
            };
            samples.push((cur.timestamp, pose));
            poses.push(pose);
            per_frame.push(FrameSummary {
                timestamp: cur.timestamp,
                keypoints: track.keypoints,
                correspondences: track.correspondences,
                selected: track.selected,
                inliers: track.inliers,
                lost: track.lost,
                mask_fraction: mask_fraction(cur),
            });
        }

        let clouds = loaded
            .par_iter()
            .zip(&poses)
            .map(|(f, pose)| {
                if let Some(dir) = out_dir {
                    write_masks(dir, f)?;
                }
                if !cfg.mapping {
                    return Ok(ColoredPointCloud::default());
                }
                let mask = f.masks.as_ref().map(|m| dilate(&m.m_c, cfg.dilate));
                frame_to_cloud(&f.rgb, &f.depth, mask.as_ref(), intr, pose, &cfg.map)
            })
            .collect::<Result<Vec<_>>>()?;
        for c in &clouds {
            map.add(c);
        }
        prev = loaded.into_iter().last();
    }

    let trajectory = Trajectory::new(samples)?;
    let cloud = map.finish();
    let evaluation = match &seq.groundtruth {
        Some(gt) => match evaluate(&trajectory, gt, cfg.rpe_delta, cfg.max_diff) {
            Ok(ev) => Some(ev),
            Err(e) => {
                log::warn!("evaluation skipped: {e}");
                None
            }
        },
        None => None,
    };
    let report = PipelineReport {
        frames: trajectory.len(),
        lost_frames: state.lost_frames,
        map_points: cloud.len(),
        metrics: evaluation.as_ref().map(|e| e.report.clone()),
        per_frame,
    };
    Ok(PipelineOutput {
        trajectory,
        cloud,
        report,
        evaluation,
    })
}

/// Runs the pipeline and writes `trajectory.txt`, `map.ply`, `report.json`
/// and the mask PNGs into `out_dir`.
pub fn run_to_dir(
    seq: &Sequence,
    intr: &CameraIntrinsics,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<PipelineOutput> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let out = run(seq, intr, cfg, Some(out_dir))?;
    out.trajectory.write_tum(&out_dir.join("trajectory.txt"))?;
    export_ply(&out.cloud, &out_dir.join("map.ply"), cfg.binary_ply)?;
    let json = serde_json::to_string_pretty(&out.report).expect("report serializes");
    let p = out_dir.join("report.json");
    fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))?;
    Ok(out)
}

fn create_mask_dirs(out_dir: &Path) -> Result<()> {
    for sub in ["m_depth", "m_broad", "m_c"] {
        let p = out_dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// Predicts and writes the masks of every frame. Returns the frame count.
pub fn write_sequence_masks(seq: &Sequence, cfg: &PipelineConfig, out_dir: &Path) -> Result<usize> {
    let cfg = PipelineConfig {
        masking: true,
        ..cfg.clone()
    };
    create_mask_dirs(out_dir)?;
    for chunk in seq.frames.chunks(CHUNK) {
        chunk
            .par_iter()
            .map(|f| write_masks(out_dir, &load_frame(seq, f, &cfg)?))
            .collect::<Result<Vec<_>>>()?;
    }
    Ok(seq.frames.len())
}

/// Builds the map of `seq` from an existing trajectory. Frames without a
/// pose within `cfg.max_diff` are skipped.
pub fn map_from_trajectory(
    seq: &Sequence,
    trajectory: &Trajectory,
    intr: &CameraIntrinsics,
    cfg: &PipelineConfig,
) -> Result<ColoredPointCloud> {
    let frame_times: Vec<f64> = seq.frames.iter().map(|f| f.timestamp).collect();
    let pairs = crate::trajectory::associate(&frame_times, &trajectory.timestamps(), cfg.max_diff);
    if pairs.is_empty() {
        return Err(Error::NoAssociations { max_diff: cfg.max_diff });
    }
    let mut map = MapAccumulator::new(cfg.voxel)?;
    for chunk in pairs.chunks(CHUNK) {
        let clouds = chunk
            .par_iter()
            .map(|&(i, j)| {
                let f = load_frame(seq, &seq.frames[i], cfg)?;
                let mask = f.masks.as_ref().map(|m| dilate(&m.m_c, cfg.dilate));
                frame_to_cloud(&f.rgb, &f.depth, mask.as_ref(), intr, &trajectory.samples()[j].1, &cfg.map)
            })
            .collect::<Result<Vec<_>>>()?;
        for c in &clouds {
            map.add(c);
        }
    }
    Ok(map.finish())
}
