//! Frame-to-frame visual odometry: corners, optical flow, mask filtering and
//! masked pose refinement.

pub mod features;
pub mod flow;
pub mod pnp;

use nalgebra::Vector2;

pub use features::{detect_keypoints, detect_keypoints_with, DetectorConfig};
pub use flow::{track_flow, FlowResult, LkConfig};
pub use pnp::{estimate_pose, Correspondence, PoseConfig, PoseEstimate};

use crate::error::Result;
use crate::geometry::{CameraIntrinsics, Se3Pose};
use crate::raster::{BinaryMask, DepthImage, GrayImage};
use crate::resampler::{cluster_seed, resample_keypoints_detailed, Autoencoder, Keypoint, ResampleConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TrackConfig {
    pub max_keypoints: usize,
    pub detector: DetectorConfig,
    pub lk: LkConfig,
    pub pose: PoseConfig,
    /// Resampling of the pose-selection flags; `None` selects every usable match.
    pub resample: Option<ResampleConfig>,
    /// Reuse the previous frame's autoencoder weights as initialization.
    pub warm_start: bool,
    /// Depth beyond this range (meters) is ignored.
    pub max_depth: f32,
    /// Keypoints whose depth neighborhood spans more than this are dropped.
    pub max_depth_jump: f32,
    /// Half-size of that neighborhood, pixels; matches the flow window.
    pub depth_check_radius: usize,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            max_keypoints: 500,
            detector: DetectorConfig::default(),
            lk: LkConfig::default(),
            pose: PoseConfig::default(),
            resample: None,
            warm_start: false,
            max_depth: 5.0,
            max_depth_jump: 0.1,
            depth_check_radius: 10,
        }
    }
}

/// Mutable state carried between frames.
#[derive(Debug, Clone, Default)]
pub struct TrackerState {
    /// Last relative motion (previous camera to current camera).
    pub velocity: Se3Pose,
    pub network: Option<Autoencoder>,
    pub frames: usize,
    pub lost_frames: usize,
}

/// One frame as seen by the tracker. `mask` marks dynamic pixels.
#[derive(Debug, Clone, Copy)]
pub struct FrameInput<'a> {
    pub gray: &'a GrayImage,
    pub depth: &'a DepthImage,
    pub mask: Option<&'a BinaryMask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameTrack {
    /// Maps points from the previous camera frame into the current one.
    pub relative: Se3Pose,
    pub keypoints: usize,
    pub correspondences: usize,
    pub selected: usize,
    pub inliers: usize,
    pub lost: bool,
}

fn masked(mask: Option<&BinaryMask>, x: f64, y: f64) -> bool {
    mask.is_some_and(|m| m.get_or_dynamic(x.round() as i64, y.round() as i64))
}

/// Depth at the nearest pixel, rejected near discontinuities.
fn stable_depth(depth: &DepthImage, x: f64, y: f64, cfg: &TrackConfig) -> Option<f32> {
    let (cx, cy) = (x.round() as i64, y.round() as i64);
    let z = depth.valid_at(cx, cy)?;
    if z > cfg.max_depth {
        return None;
    }
    let (mut lo, mut hi) = (z, z);
    let r = cfg.depth_check_radius as i64;
    for dy in -r..=r {
        for dx in -r..=r {
            let n = depth.valid_at(cx + dx, cy + dy)?;
            lo = lo.min(n);
            hi = hi.max(n);
        }
    }
    (hi - lo <= cfg.max_depth_jump).then_some(z)
}

/// Tracks `prev` into `cur` and returns the relative camera motion.
///
/// Fewer than four usable correspondences propagate the previous velocity and
/// mark the frame as lost.
pub fn track_frame(
    prev: &FrameInput,
    cur: &FrameInput,
    intr: &CameraIntrinsics,
    cfg: &TrackConfig,
    state: &mut TrackerState,
) -> Result<FrameTrack> {
    state.frames += 1;
    let kps: Vec<Keypoint> = detect_keypoints_with(prev.gray, cfg.max_keypoints, &cfg.detector)
        .into_iter()
        .filter(|k| !masked(prev.mask, k.x, k.y))
        .collect();
    let pts: Vec<(f32, f32)> = kps.iter().map(|k| (k.x as f32, k.y as f32)).collect();
    let flows = track_flow(prev.gray, cur.gray, &pts, &cfg.lk);

    let mut usable: Vec<Keypoint> = Vec::new();
    let mut corrs: Vec<Correspondence> = Vec::new();
    for (k, f) in kps.iter().zip(&flows) {
        if !f.tracked || masked(cur.mask, f.x as f64, f.y as f64) {
            continue;
        }
        let Some(z) = stable_depth(prev.depth, k.x, k.y, cfg) else {
            continue;
        };
        let Some(point) = intr.backproject(k.x, k.y, z as f64) else {
            continue;
        };
        usable.push(*k);
        corrs.push(Correspondence {
            pixel: Vector2::new(f.x as f64, f.y as f64),
            point,
            selected: true,
        });
    }

    if let Some(rcfg) = &cfg.resample {
        let frame_cfg = ResampleConfig {
            seed: cluster_seed(rcfg.seed, state.frames),
            ..*rcfg
        };
        let warm = if cfg.warm_start { state.network.as_ref() } else { None };
        let outcome = resample_keypoints_detailed(&usable, &frame_cfg, warm)?;
        for (c, class) in corrs.iter_mut().zip(&outcome.classes) {
            c.selected = *class != crate::resampler::KeypointClass::Removed;
        }
        if outcome.network.is_some() {
            state.network = outcome.network;
        }
    }

    let selected = corrs.iter().filter(|c| c.selected).count();
    let mut track = FrameTrack {
        relative: state.velocity,
        keypoints: kps.len(),
        correspondences: corrs.len(),
        selected,
        inliers: 0,
        lost: true,
    };
    match estimate_pose(&corrs, intr, &state.velocity, &cfg.pose) {
        Ok(est) => {
            track.relative = est.pose;
            track.inliers = est.inliers;
            track.lost = false;
            state.velocity = est.pose;
        }
        Err(crate::error::Error::Degenerate(why)) => {
            log::warn!("frame {} lost: {why}", state.frames);
            state.lost_frames += 1;
        }
        Err(e) => return Err(e),
    }
    Ok(track)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(x: usize, y: usize) -> f32 {
        let (x, y) = (x as f32, y as f32);
        128.0 + 60.0 * (0.21 * x).sin() * (0.17 * y).cos() + 40.0 * (0.05 * x + 0.33 * y).sin()
    }

    #[test]
    fn zero_motion_gives_identity() {
        let gray = GrayImage::from_fn(160, 120, texture);
        let depth = DepthImage::from_fn(160, 120, |_, _| 2.0);
        let f = FrameInput {
            gray: &gray,
            depth: &depth,
            mask: None,
        };
        let intr = CameraIntrinsics::new(150.0, 150.0, 79.5, 59.5).unwrap();
        let mut state = TrackerState::default();
        let t = track_frame(&f, &f, &intr, &TrackConfig::default(), &mut state).unwrap();
        assert!(!t.lost);
        assert!(t.relative.rotation_angle() < 1e-6);
        assert!(t.relative.translation.norm() < 1e-6);
    }

    #[test]
    fn fully_masked_frame_is_lost() {
        let gray = GrayImage::from_fn(160, 120, texture);
        let depth = DepthImage::from_fn(160, 120, |_, _| 2.0);
        let mask = BinaryMask::from_fn(160, 120, |_, _| true);
        let f = FrameInput {
            gray: &gray,
            depth: &depth,
            mask: Some(&mask),
        };
        let intr = CameraIntrinsics::new(150.0, 150.0, 79.5, 59.5).unwrap();
        let mut state = TrackerState::default();
        let t = track_frame(&f, &f, &intr, &TrackConfig::default(), &mut state).unwrap();
        assert!(t.lost);
        assert_eq!(t.keypoints, 0);
        assert_eq!(state.lost_frames, 1);
    }
}
