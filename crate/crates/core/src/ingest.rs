//! TUM-layout RGB-D sequence loading.
//!
//! A sequence directory holds `rgb.txt` and `depth.txt` (lines of
//! `timestamp filename`) and optionally `groundtruth.txt`. RGB and depth
//! streams are paired by nearest timestamp.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::raster::{read_raw_u16, DepthImage, RgbImage};
use crate::trajectory::{associate, Trajectory};

/// One associated RGB/depth frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub timestamp: f64,
    pub rgb_path: PathBuf,
    pub depth_path: PathBuf,
}

/// Result of loading a sequence directory.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub root: PathBuf,
    pub frames: Vec<FrameRecord>,
    pub groundtruth: Option<Trajectory>,
    /// Malformed index/ground-truth lines that were skipped.
    pub skipped_lines: usize,
}

impl Sequence {
    pub fn read_rgb(&self, frame: &FrameRecord) -> Result<RgbImage> {
        RgbImage::read(&frame.rgb_path)
    }

    pub fn read_depth(&self, frame: &FrameRecord, depth_scale: f32) -> Result<DepthImage> {
        read_depth(&frame.depth_path, depth_scale)
    }
}

/// Parses a `timestamp filename` index. Returns entries and the skipped-line count.
pub fn parse_index(text: &str) -> (Vec<(f64, String)>, usize) {
    let mut entries = Vec::new();
    let mut skipped = 0;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let parsed = match (parts.next(), parts.next()) {
            (Some(ts), Some(name)) => ts
                .parse::<f64>()
                .ok()
                .filter(|t| t.is_finite() && *t >= 0.0)
                .map(|t| (t, name.to_string())),
            _ => None,
        };
        match parsed {
            Some(e) => entries.push(e),
            None => {
                log::warn!("skipping malformed index line {line:?}");
                skipped += 1;
            }
        }
    }
    (entries, skipped)
}

fn read_index(path: &Path) -> Result<(Vec<(f64, String)>, usize)> {
    if !path.is_file() {
        return Err(Error::MissingIndex(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_index(&text))
}

/// Loads and associates a TUM-format sequence directory.
pub fn load_sequence(dir: &Path, max_diff: f64) -> Result<Sequence> {
    let (rgb, skipped_rgb) = read_index(&dir.join("rgb.txt"))?;
    let (depth, skipped_depth) = read_index(&dir.join("depth.txt"))?;

    let rgb_ts: Vec<f64> = rgb.iter().map(|e| e.0).collect();
    let depth_ts: Vec<f64> = depth.iter().map(|e| e.0).collect();
    let pairs = associate(&rgb_ts, &depth_ts, max_diff);
    if pairs.is_empty() {
        return Err(Error::NoAssociations { max_diff });
    }

    let mut frames: Vec<FrameRecord> = pairs
        .into_iter()
        .map(|(i, j)| FrameRecord {
            timestamp: rgb[i].0,
            rgb_path: dir.join(&rgb[i].1),
            depth_path: dir.join(&depth[j].1),
        })
        .collect();
    frames.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    frames.dedup_by(|b, a| a.timestamp == b.timestamp);

    let gt_path = dir.join("groundtruth.txt");
    let (groundtruth, skipped_gt) = if gt_path.is_file() {
        let (traj, skipped) = Trajectory::read_tum(&gt_path)?;
        (Some(traj), skipped)
    } else {
        (None, 0)
    };

    let skipped_lines = skipped_rgb + skipped_depth + skipped_gt;
    if skipped_lines > 0 {
        log::warn!("{}: skipped {skipped_lines} malformed lines", dir.display());
    }
    Ok(Sequence {
        root: dir.to_path_buf(),
        frames,
        groundtruth,
        skipped_lines,
    })
}

/// Converts raw 16-bit depth samples to meters; raw 0 stays 0 (invalid).
pub fn decode_depth(width: usize, height: usize, raw: &[u16], depth_scale: f32) -> Result<DepthImage> {
    if !(depth_scale > 0.0 && depth_scale.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "depth scale must be positive, got {depth_scale}"
        )));
    }
    let data = raw.iter().map(|&r| r as f32 / depth_scale).collect();
    DepthImage::new(width, height, data, depth_scale)
}

/// Reads a 16-bit PNG/PGM depth image and converts it to meters.
pub fn read_depth(path: &Path, depth_scale: f32) -> Result<DepthImage> {
    let (w, h, raw) = read_raw_u16(path)?;
    decode_depth(w, h, &raw, depth_scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_examples() {
        let d = decode_depth(3, 1, &[5000, 0, 65535], 5000.0).unwrap();
        assert_eq!(d.get(0, 0), 1.0);
        assert_eq!(d.get(1, 0), 0.0);
        assert!((d.get(2, 0) - 13.107).abs() < 1e-5);
    }

    #[test]
    fn decode_rejects_bad_scale() {
        assert!(decode_depth(1, 1, &[1], 0.0).is_err());
        assert!(decode_depth(1, 1, &[1], -5.0).is_err());
    }

    #[test]
    fn decode_is_linear() {
        for raw in [1u16, 7, 300, 2000] {
            for k in [2u16, 3, 10] {
                let a = decode_depth(1, 1, &[raw], 5000.0).unwrap().get(0, 0);
                let b = decode_depth(1, 1, &[raw * k], 5000.0).unwrap().get(0, 0);
                assert!((b - k as f32 * a).abs() <= 1e-6 * b);
            }
        }
    }

    fn write(dir: &Path, name: &str, text: &str) {
        std::fs::write(dir.join(name), text).unwrap();
    }

    #[test]
    fn load_associates_and_sorts() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "rgb.txt", "# rgb\n2.00 rgb/2.png\n1.00 rgb/1.png\ngarbage\n");
        write(dir.path(), "depth.txt", "3.00 depth/3.png\n1.01 depth/1.png\n2.005 depth/2.png\n");
        let seq = load_sequence(dir.path(), 0.02).unwrap();
        let ts: Vec<f64> = seq.frames.iter().map(|f| f.timestamp).collect();
        assert_eq!(ts, vec![1.0, 2.0]);
        assert!(seq.frames[0].depth_path.ends_with("depth/1.png"));
        assert_eq!(seq.skipped_lines, 1);
        assert!(seq.groundtruth.is_none());
    }

    #[test]
    fn missing_index_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "rgb.txt", "1.0 a.png\n");
        assert!(matches!(
            load_sequence(dir.path(), 0.02),
            Err(Error::MissingIndex(_))
        ));
    }

    #[test]
    fn zero_associations_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "rgb.txt", "1.00 a.png\n");
        write(dir.path(), "depth.txt", "1.05 b.png\n");
        assert!(matches!(
            load_sequence(dir.path(), 0.02),
            Err(Error::NoAssociations { .. })
        ));
    }
}
