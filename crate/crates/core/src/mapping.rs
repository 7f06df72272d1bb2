//! Colored point-cloud maps from masked RGB-D frames.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Se3Pose};
use crate::raster::{BinaryMask, DepthImage, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredPoint {
    pub position: [f32; 3],
    pub color: [u8; 3],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColoredPointCloud {
    pub points: Vec<ColoredPoint>,
}

impl ColoredPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapConfig {
    pub stride: usize,
    /// Meters.
    pub max_range: f32,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            stride: 2,
            max_range: 5.0,
        }
    }
}

/// Back-projects every `stride`-th static pixel with depth in
/// `(0, max_range]` and moves it into the world frame with the
/// camera-to-world `pose`.
pub fn frame_to_cloud(
    rgb: &RgbImage,
    depth: &DepthImage,
    mask: Option<&BinaryMask>,
    intr: &CameraIntrinsics,
    pose: &Se3Pose,
    cfg: &MapConfig,
) -> Result<ColoredPointCloud> {
    let dims = (depth.width(), depth.height());
    if (rgb.width(), rgb.height()) != dims {
        return Err(Error::dims(dims, (rgb.width(), rgb.height())));
    }
    if let Some(m) = mask {
        if m.dims() != dims {
            return Err(Error::dims(dims, m.dims()));
        }
    }
    if cfg.stride == 0 {
        return Err(Error::InvalidParameter("stride must be >= 1".into()));
    }
    let mut points = Vec::new();
    for y in (0..dims.1).step_by(cfg.stride) {
        for x in (0..dims.0).step_by(cfg.stride) {
            if mask.is_some_and(|m| m.get(x, y)) {
                continue;
            }
            let z = depth.get(x, y);
            if !(z > 0.0 && z <= cfg.max_range) {
                continue;
            }
            let Some(p) = intr.backproject(x as f64, y as f64, z as f64) else {
                continue;
            };
            let w = pose.transform_point(&p);
            points.push(ColoredPoint {
                position: [w.x as f32, w.y as f32, w.z as f32],
                color: rgb.get(x, y),
            });
        }
    }
    Ok(ColoredPointCloud { points })
}

/// Incremental form of [`stitch`]: feeding clouds one by one gives the same
/// result as stitching them at once.
#[derive(Debug, Clone)]
pub struct MapAccumulator {
    voxel: f64,
    raw: Vec<ColoredPoint>,
    cells: BTreeMap<[i64; 3], ([f64; 3], [u64; 3], u64)>,
}

impl MapAccumulator {
    pub fn new(voxel: f64) -> Result<Self> {
        if !(voxel >= 0.0) || !voxel.is_finite() {
            return Err(Error::InvalidParameter(format!("voxel must be >= 0, got {voxel}")));
        }
        Ok(Self {
            voxel,
            raw: Vec::new(),
            cells: BTreeMap::new(),
        })
    }

    pub fn add(&mut self, cloud: &ColoredPointCloud) {
        if self.voxel == 0.0 {
            self.raw.extend_from_slice(&cloud.points);
            return;
        }
        for p in &cloud.points {
            let key = p.position.map(|c| (c as f64 / self.voxel).floor() as i64);
            let cell = self.cells.entry(key).or_insert(([0.0; 3], [0; 3], 0));
            for k in 0..3 {
                cell.0[k] += p.position[k] as f64;
                cell.1[k] += p.color[k] as u64;
            }
            cell.2 += 1;
        }
    }

    pub fn finish(self) -> ColoredPointCloud {
        if self.voxel == 0.0 {
            return ColoredPointCloud { points: self.raw };
        }
        let points = self
            .cells
            .values()
            .map(|(pos, col, n)| {
                let nf = *n as f64;
                ColoredPoint {
                    position: pos.map(|s| (s / nf) as f32),
                    color: col.map(|s| ((s + n / 2) / n) as u8),
                }
            })
            .collect();
        ColoredPointCloud { points }
    }
}

/// Concatenates `clouds`. A positive `voxel` replaces the points of every
/// occupied voxel by their centroid and mean color, in sorted voxel order.
pub fn stitch(clouds: &[ColoredPointCloud], voxel: f64) -> Result<ColoredPointCloud> {
    let mut acc = MapAccumulator::new(voxel)?;
    for c in clouds {
        acc.add(c);
    }
    Ok(acc.finish())
}

fn header(n: usize, format: &str) -> String {
    format!(
        "ply\nformat {format} 1.0\nelement vertex {n}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
    )
}

/// Writes `cloud` as PLY, ascii or binary little-endian.
pub fn export_ply(cloud: &ColoredPointCloud, path: &Path, binary: bool) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let fmt = if binary { "binary_little_endian" } else { "ascii" };
    let io = |e| Error::io(path, e);
    w.write_all(header(cloud.len(), fmt).as_bytes()).map_err(io)?;
    for p in &cloud.points {
        if binary {
            for c in p.position {
                w.write_all(&c.to_le_bytes()).map_err(io)?;
            }
            w.write_all(&p.color).map_err(io)?;
        } else {
            let [x, y, z] = p.position;
            let [r, g, b] = p.color;
            writeln!(w, "{x} {y} {z} {r} {g} {b}").map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

fn bad_ply(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        context: path.display().to_string(),
        message: message.into(),
    }
}

/// Reads PLY files with the vertex layout produced by [`export_ply`].
pub fn read_ply(path: &Path) -> Result<ColoredPointCloud> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    let mut lines = Vec::new();
    loop {
        line.clear();
        if r.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 {
            return Err(bad_ply(path, "missing end_header"));
        }
        let l = line.trim().to_string();
        if l == "end_header" {
            break;
        }
        lines.push(l);
    }
    if lines.first().map(String::as_str) != Some("ply") {
        return Err(bad_ply(path, "missing ply magic"));
    }
    let mut binary = None;
    let mut count = None;
    let mut props = Vec::new();
    for l in &lines[1..] {
        let f: Vec<&str> = l.split_whitespace().collect();
        match f.as_slice() {
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["element", "vertex", n] => count = n.parse::<usize>().ok(),
            ["property", ty, name] => props.push(format!("{ty} {name}")),
            ["comment", ..] => {}
            _ => return Err(bad_ply(path, format!("unsupported header line {l:?}"))),
        }
    }
    let expected = ["float x", "float y", "float z", "uchar red", "uchar green", "uchar blue"];
    if props != expected {
        return Err(bad_ply(path, format!("unsupported vertex layout {props:?}")));
    }
    let (Some(binary), Some(n)) = (binary, count) else {
        return Err(bad_ply(path, "missing format or vertex count"));
    };
    let mut points = Vec::with_capacity(n);
    if binary {
        let mut buf = [0u8; 15];
        for _ in 0..n {
            r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
            let f = |k: usize| f32::from_le_bytes(buf[4 * k..4 * k + 4].try_into().unwrap());
            points.push(ColoredPoint {
                position: [f(0), f(1), f(2)],
                color: [buf[12], buf[13], buf[14]],
            });
        }
    } else {
        for _ in 0..n {
            line.clear();
            r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 {
                return Err(bad_ply(path, format!("bad vertex line {line:?}")));
            }
            let num = |s: &str| s.parse::<f32>().map_err(|_| bad_ply(path, format!("bad number {s:?}")));
            let byte = |s: &str| s.parse::<u8>().map_err(|_| bad_ply(path, format!("bad color {s:?}")));
            points.push(ColoredPoint {
                position: [num(f[0])?, num(f[1])?, num(f[2])?],
                color: [byte(f[3])?, byte(f[4])?, byte(f[5])?],
            });
        }
    }
    Ok(ColoredPointCloud { points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 2.0, 2.0).unwrap()
    }

    #[test]
    fn principal_point_backprojects_on_axis() {
        let rgb = RgbImage::filled(5, 5, [10, 20, 30]);
        let depth = DepthImage::from_fn(5, 5, |x, y| if (x, y) == (2, 2) { 1.0 } else { 0.0 });
        let cfg = MapConfig { stride: 1, ..Default::default() };
        let cloud = frame_to_cloud(&rgb, &depth, None, &intr(), &Se3Pose::identity(), &cfg).unwrap();
        assert_eq!(cloud.points, vec![ColoredPoint { position: [0.0, 0.0, 1.0], color: [10, 20, 30] }]);
    }

    #[test]
    fn dynamic_mask_removes_everything() {
        let rgb = RgbImage::filled(6, 4, [1, 2, 3]);
        let depth = DepthImage::from_fn(6, 4, |_, _| 2.0);
        let mask = BinaryMask::from_fn(6, 4, |_, _| true);
        let cloud =
            frame_to_cloud(&rgb, &depth, Some(&mask), &intr(), &Se3Pose::identity(), &MapConfig::default()).unwrap();
        assert!(cloud.is_empty());
    }

    #[test]
    fn range_limit_and_stride() {
        let rgb = RgbImage::filled(6, 4, [1, 2, 3]);
        let depth = DepthImage::from_fn(6, 4, |x, _| if x < 3 { 2.0 } else { 7.0 });
        let cloud = frame_to_cloud(&rgb, &depth, None, &intr(), &Se3Pose::identity(), &MapConfig::default()).unwrap();
        // stride 2 visits columns 0, 2, 4 and rows 0, 2; column 4 is out of range.
        assert_eq!(cloud.len(), 4);
    }

    #[test]
    fn voxel_merge_averages() {
        let a = ColoredPointCloud {
            points: vec![
                ColoredPoint { position: [0.01, 0.01, 0.01], color: [0, 0, 0] },
                ColoredPoint { position: [0.03, 0.03, 0.03], color: [10, 20, 255] },
                ColoredPoint { position: [1.0, 1.0, 1.0], color: [5, 5, 5] },
            ],
        };
        let s = stitch(&[a.clone()], 0.1).unwrap();
        assert_eq!(s.len(), 2);
        assert!((s.points[0].position[0] - 0.02).abs() < 1e-7);
        assert_eq!(s.points[0].color, [5, 10, 128]);
        assert_eq!(stitch(&[a.clone()], 0.0).unwrap(), a);
        assert!(stitch(&[a], -1.0).is_err());
    }

    #[test]
    fn empty_cloud_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        for binary in [false, true] {
            let p = dir.path().join("e.ply");
            export_ply(&ColoredPointCloud::default(), &p, binary).unwrap();
            assert!(read_ply(&p).unwrap().is_empty());
        }
    }
}
