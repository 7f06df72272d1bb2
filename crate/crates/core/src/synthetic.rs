//! Ray-cast RGB-D test sequence: a textured back wall, a static panel and a
//! thin textured box sliding across the view while the camera drifts.
//!
//! Ground truth includes camera poses, box poses and per-pixel box masks, so
//! masking, tracking and mapping can be scored exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Se3Pose};
use crate::mapping::ColoredPointCloud;
use crate::raster::{write_raw_u16_png, BinaryMask, DepthImage, RgbImage, DEFAULT_DEPTH_SCALE};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    pub start_time: f64,
    /// Texture seed.
    pub seed: u64,
    /// Lateral box speed, meters per frame.
    pub box_speed: f64,
    /// Camera translation per frame, meters.
    pub camera_step: [f64; 3],
    /// Camera yaw per frame, radians.
    pub camera_yaw_step: f64,
    /// Amplitude of a vertical sinusoidal camera bob, meters.
    pub camera_bob: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            frames: 30,
            width: 320,
            height: 240,
            fps: 15.0,
            start_time: 1.0,
            seed: 7,
            box_speed: 0.03,
            camera_step: [0.01, 0.002, 0.003],
            camera_yaw_step: 0.0015,
            camera_bob: 0.015,
        }
    }
}

pub const WALL_Z: f64 = 3.0;

/// Static fronto-parallel panel.
struct Panel {
    z: f64,
    x: [f64; 2],
    y: [f64; 2],
    color: [f64; 3],
    cell: f64,
}

const PANELS: [Panel; 3] = [
    Panel { z: 2.3, x: [-1.3, -0.8], y: [0.1, 0.8], color: [150.0, 190.0, 240.0], cell: 0.09 },
    Panel { z: 1.1, x: [-0.75, -0.35], y: [-0.5, -0.15], color: [120.0, 230.0, 140.0], cell: 0.05 },
    Panel { z: 2.0, x: [0.9, 1.2], y: [-0.9, 0.9], color: [220.0, 200.0, 250.0], cell: 0.07 },
];

/// Nearest static surface, meters.
pub const MIN_STATIC_Z: f64 = 1.1;
/// Box half extents (width, height, thickness), meters.
pub const BOX_HALF: [f64; 3] = [0.35, 0.45, 0.03];
const BOX_YAW_DEG: f64 = 32.0;
const BOX_START: [f64; 3] = [-0.30, 0.10, 1.6];

pub struct SyntheticFrame {
    pub timestamp: f64,
    pub rgb: RgbImage,
    pub depth: DepthImage,
    /// Pixels whose center ray hits the box.
    pub box_mask: BinaryMask,
}

pub struct SyntheticSequence {
    pub config: SyntheticConfig,
    pub intrinsics: CameraIntrinsics,
    /// Camera-to-world.
    pub camera_poses: Vec<Se3Pose>,
    /// Box-to-world.
    pub box_poses: Vec<Se3Pose>,
    pub frames: Vec<SyntheticFrame>,
}

pub fn intrinsics_for(width: usize, height: usize) -> CameraIntrinsics {
    let f = 260.0 * width as f64 / 320.0;
    CameraIntrinsics {
        fx: f,
        fy: f,
        cx: (width as f64 - 1.0) / 2.0,
        cy: (height as f64 - 1.0) / 2.0,
    }
}

fn yaw(rad: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::y_axis(), rad)
}

pub fn camera_pose(cfg: &SyntheticConfig, k: usize) -> Se3Pose {
    let s = cfg.camera_step;
    let k = k as f64;
    let bob = cfg.camera_bob * (0.25 * k).sin();
    Se3Pose::new(yaw(cfg.camera_yaw_step * k), Vector3::new(s[0] * k, s[1] * k + bob, s[2] * k))
}

pub fn box_pose(cfg: &SyntheticConfig, k: usize) -> Se3Pose {
    Se3Pose::new(
        yaw(BOX_YAW_DEG.to_radians()),
        Vector3::new(BOX_START[0] + cfg.box_speed * k as f64, BOX_START[1], BOX_START[2]),
    )
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn lattice(ix: i64, iy: i64, seed: u64) -> f64 {
    let h = splitmix(seed ^ splitmix((ix as u64) ^ splitmix(iy as u64).rotate_left(17)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let (sx, sy) = (smooth(x - fx), smooth(y - fy));
    let a = lattice(ix, iy, seed) * (1.0 - sx) + lattice(ix + 1, iy, seed) * sx;
    let b = lattice(ix, iy + 1, seed) * (1.0 - sx) + lattice(ix + 1, iy + 1, seed) * sx;
    a * (1.0 - sy) + b * sy
}

/// Three-octave value noise in `[0, 1]`; `cell` is the coarsest feature size.
fn fbm(x: f64, y: f64, cell: f64, seed: u64) -> f64 {
    let mut v = 0.0;
    for (o, amp) in [0.5, 0.3, 0.2].into_iter().enumerate() {
        let c = cell / (1 << o) as f64;
        v += amp * value_noise(x / c, y / c, seed.wrapping_add(o as u64));
    }
    v
}

fn shade(base: [f64; 3], v: f64) -> [f64; 3] {
    base.map(|b| (b * (0.25 + 0.75 * v)).clamp(0.0, 255.0))
}

enum Surface {
    Wall(f64, f64),
    Panel(usize, f64, f64),
    Box(f64, f64),
}

struct Hit {
    depth: f64,
    surface: Surface,
}

struct Scene<'a> {
    cfg: &'a SyntheticConfig,
    box_inv: Se3Pose,
}

impl Scene<'_> {
    /// Nearest hit along `origin + t * dir`, where `dir` is the rotated
    /// camera ray with unit z in camera coordinates, so `t` is camera depth.
    fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut offer = |depth: f64, surface: Surface| {
            if depth > 1e-6 && best.as_ref().is_none_or(|b| depth < b.depth) {
                best = Some(Hit { depth, surface });
            }
        };
        if dir.z.abs() > 1e-12 {
            let t = (WALL_Z - origin.z) / dir.z;
            let p = origin + dir * t;
            offer(t, Surface::Wall(p.x, p.y));
            for (i, panel) in PANELS.iter().enumerate() {
                let t = (panel.z - origin.z) / dir.z;
                let p = origin + dir * t;
                if (panel.x[0]..=panel.x[1]).contains(&p.x) && (panel.y[0]..=panel.y[1]).contains(&p.y) {
                    offer(t, Surface::Panel(i, p.x, p.y));
                }
            }
        }
        // Slab test in box coordinates.
        let o = self.box_inv.transform_point(origin);
        let d = self.box_inv.rotation * dir;
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut axis = 0;
        for a in 0..3 {
            if d[a].abs() < 1e-12 {
                if o[a].abs() > BOX_HALF[a] {
                    t0 = f64::INFINITY;
                }
                continue;
            }
            let (mut lo, mut hi) = ((-BOX_HALF[a] - o[a]) / d[a], (BOX_HALF[a] - o[a]) / d[a]);
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            if lo > t0 {
                t0 = lo;
                axis = a;
            }
            t1 = t1.min(hi);
        }
        if t0 <= t1 && t0.is_finite() {
            let p = o + d * t0;
            let (u, v) = match axis {
                0 => (p.z, p.y),
                1 => (p.x, p.z),
                _ => (p.x, p.y),
            };
            offer(t0, Surface::Box(u, v));
        }
        best
    }

    fn color(&self, s: &Surface) -> [f64; 3] {
        let seed = self.cfg.seed;
        match *s {
            Surface::Wall(x, y) => shade([235.0, 225.0, 200.0], fbm(x, y, 0.16, seed)),
            Surface::Panel(i, x, y) => {
                let p = &PANELS[i];
                shade(p.color, fbm(x, y, p.cell, seed ^ (0x5a + i as u64)))
            }
            Surface::Box(u, v) => {
                let checker = ((u / 0.1).floor() as i64 + (v / 0.1).floor() as i64).rem_euclid(2) as f64;
                let n = fbm(u, v, 0.05, seed ^ 0xb0);
                shade([250.0, 120.0, 60.0], 0.15 + 0.6 * checker + 0.25 * n)
            }
        }
    }
}

fn render_frame(cfg: &SyntheticConfig, intr: &CameraIntrinsics, k: usize) -> Result<SyntheticFrame> {
    let cam = camera_pose(cfg, k);
    let bp = box_pose(cfg, k);
    let scene = Scene {
        cfg,
        box_inv: bp.inverse(),
    };
    let (w, h) = (cfg.width, cfg.height);
    let ray = |u: f64, v: f64| cam.rotation * Vector3::new((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
    let origin = cam.translation;

    let rows: Vec<(Vec<u16>, Vec<u8>, Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut raw = Vec::with_capacity(w);
            let mut rgb = Vec::with_capacity(3 * w);
            let mut on_box = Vec::with_capacity(w);
            for x in 0..w {
                let (u, v) = (x as f64, y as f64);
                let center = scene.cast(&origin, &ray(u, v));
                let (d, is_box) = match &center {
                    Some(hit) => (hit.depth, matches!(hit.surface, Surface::Box(..))),
                    None => (0.0, false),
                };
                raw.push((d * DEFAULT_DEPTH_SCALE as f64).round().clamp(0.0, 65535.0) as u16);
                on_box.push(is_box);
                let mut acc = [0.0; 3];
                for (ox, oy) in [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
                    if let Some(hit) = scene.cast(&origin, &ray(u + ox, v + oy)) {
                        let c = scene.color(&hit.surface);
                        for i in 0..3 {
                            acc[i] += c[i] / 4.0;
                        }
                    }
                }
                rgb.extend(acc.map(|c| c.round() as u8));
            }
            (raw, rgb, on_box)
        })
        .collect();

    let mut raw = Vec::with_capacity(w * h);
    let mut rgb = Vec::with_capacity(3 * w * h);
    let mut mask = BinaryMask::zeros(w, h);
    for (y, (r, c, m)) in rows.into_iter().enumerate() {
        raw.extend(r);
        rgb.extend(c);
        for (x, on) in m.into_iter().enumerate() {
            mask.set(x, y, on);
        }
    }
    Ok(SyntheticFrame {
        timestamp: cfg.start_time + k as f64 / cfg.fps,
        rgb: RgbImage::new(w, h, rgb)?,
        depth: crate::ingest::decode_depth(w, h, &raw, DEFAULT_DEPTH_SCALE)?,
        box_mask: mask,
    })
}

/// Renders the whole sequence.
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticSequence> {
    if cfg.frames == 0 || cfg.width < 16 || cfg.height < 16 || !(cfg.fps > 0.0) {
        return Err(Error::InvalidParameter(format!("invalid synthetic config {cfg:?}")));
    }
    let intrinsics = intrinsics_for(cfg.width, cfg.height);
    let frames = (0..cfg.frames)
        .map(|k| render_frame(cfg, &intrinsics, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticSequence {
        config: *cfg,
        intrinsics,
        camera_poses: (0..cfg.frames).map(|k| camera_pose(cfg, k)).collect(),
        box_poses: (0..cfg.frames).map(|k| box_pose(cfg, k)).collect(),
        frames,
    })
}

impl SyntheticSequence {
    pub fn ground_truth(&self) -> Trajectory {
        Trajectory::new(
            self.frames
                .iter()
                .zip(&self.camera_poses)
                .map(|(f, p)| (f.timestamp, *p))
                .collect(),
        )
        .expect("synthetic timestamps are increasing")
    }

    /// Whether `p` (world) lies inside the box at any frame, with every
    /// half extent grown by `margin`.
    pub fn in_swept_volume(&self, p: &Vector3<f64>, margin: f64) -> bool {
        self.box_poses.iter().any(|b| {
            let l = b.inverse().transform_point(p);
            (0..3).all(|a| l[a].abs() <= BOX_HALF[a] + margin)
        })
    }

    /// Fraction of cloud points inside the swept box volume.
    pub fn swept_fraction(&self, cloud: &ColoredPointCloud, margin: f64) -> f64 {
        if cloud.is_empty() {
            return 0.0;
        }
        let inv: Vec<Se3Pose> = self.box_poses.iter().map(Se3Pose::inverse).collect();
        let inside = cloud
            .points
            .iter()
            .filter(|pt| {
                let p = Vector3::new(pt.position[0] as f64, pt.position[1] as f64, pt.position[2] as f64);
                inv.iter().any(|b| {
                    let l = b.transform_point(&p);
                    (0..3).all(|a| l[a].abs() <= BOX_HALF[a] + margin)
                })
            })
            .count();
        inside as f64 / cloud.len() as f64
    }

    /// Writes a TUM-layout directory: `rgb/`, `depth/`, index files,
    /// `groundtruth.txt`, `intrinsics.txt`, `box_poses.txt` and `mask_gt/`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for sub in ["rgb", "depth", "mask_gt"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let mut rgb_idx = String::from("# color images\n# timestamp filename\n");
        let mut depth_idx = String::from("# depth maps\n# timestamp filename\n");
        for f in &self.frames {
            let name = format!("{:.6}.png", f.timestamp);
            f.rgb.write_png(&dir.join("rgb").join(&name))?;
            write_raw_u16_png(&dir.join("depth").join(&name), f.depth.width(), f.depth.height(), &f.depth.to_raw())?;
            f.box_mask.write_png(&dir.join("mask_gt").join(&name))?;
            let _ = writeln!(rgb_idx, "{:.6} rgb/{name}", f.timestamp);
            let _ = writeln!(depth_idx, "{:.6} depth/{name}", f.timestamp);
        }
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("rgb.txt", rgb_idx)?;
        write("depth.txt", depth_idx)?;
        self.ground_truth().write_tum(&dir.join("groundtruth.txt"))?;
        let boxes = Trajectory::new(
            self.frames
                .iter()
                .zip(&self.box_poses)
                .map(|(f, p)| (f.timestamp, *p))
                .collect(),
        )?;
        boxes.write_tum(&dir.join("box_poses.txt"))?;
        write("intrinsics.txt", self.intrinsics.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            frames: 2,
            ..Default::default()
        }
    }

    #[test]
    fn wall_depth_at_first_frame() {
        let seq = generate(&small()).unwrap();
        let d = &seq.frames[0].depth;
        // Top center sees the wall at the initial pose.
        assert_eq!(d.get(160, 5), WALL_Z as f32);
        assert!(seq.frames[0].box_mask.count_ones() > 0);
    }

    #[test]
    fn box_pixels_have_box_depth() {
        let seq = generate(&small()).unwrap();
        let f = &seq.frames[0];
        for y in 0..f.depth.height() {
            for x in 0..f.depth.width() {
                let z = f.depth.get(x, y);
                if f.box_mask.get(x, y) {
                    assert!(z > 1.1 && z < 2.1, "{z}");
                } else {
                    assert!(z >= MIN_STATIC_Z as f32 - 0.05, "{z}");
                }
            }
        }
    }

    #[test]
    fn box_center_is_in_swept_volume() {
        let seq = generate(&small()).unwrap();
        assert!(seq.in_swept_volume(&seq.box_poses[1].translation, 0.0));
        assert!(!seq.in_swept_volume(&Vector3::new(0.0, 0.0, WALL_Z), 0.02));
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.frames[1].rgb, b.frames[1].rgb);
        assert_eq!(a.frames[1].depth, b.frames[1].depth);
    }
}
