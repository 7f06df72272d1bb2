//! Timestamped pose sequences, TUM text I/O and nearest-timestamp association.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Se3Pose;

/// Default association tolerance in seconds.
pub const DEFAULT_MAX_DIFF: f64 = 0.02;

/// Time-ordered camera-to-world poses.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    samples: Vec<(f64, Se3Pose)>,
}

impl Trajectory {
    /// Builds a trajectory, sorting by timestamp. Duplicate or non-finite
    /// timestamps are rejected.
    pub fn new(mut samples: Vec<(f64, Se3Pose)>) -> Result<Self> {
        if let Some((t, _)) = samples.iter().find(|(t, _)| !t.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite timestamp {t}")));
        }
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = samples.windows(2).find(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidParameter(format!(
                "duplicate timestamp {}",
                w[1].0
            )));
        }
        for (_, pose) in samples.iter_mut() {
            pose.rotation.renormalize();
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(f64, Se3Pose)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.samples.iter().map(|(t, _)| *t).collect()
    }

    pub fn poses(&self) -> impl Iterator<Item = &Se3Pose> {
        self.samples.iter().map(|(_, p)| p)
    }

    /// Left-multiplies every pose by `g`.
    pub fn transformed(&self, g: &Se3Pose) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|(t, p)| (*t, g.compose(p)))
                .collect(),
        }
    }

    /// Parses TUM `timestamp tx ty tz qx qy qz qw` lines. Returns the
    /// trajectory and the number of malformed lines skipped.
    pub fn parse_tum(text: &str) -> Result<(Self, usize)> {
        let mut samples = Vec::new();
        let mut skipped = 0;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match parse_pose_line(line) {
                Some(s) => samples.push(s),
                None => {
                    log::warn!("skipping malformed trajectory line {line:?}");
                    skipped += 1;
                }
            }
        }
        Ok((Self::new(samples)?, skipped))
    }

    pub fn read_tum(path: &Path) -> Result<(Self, usize)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tum(&text)
    }

    pub fn to_tum(&self) -> String {
        let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
        for (t, pose) in &self.samples {
            let _ = writeln!(out, "{t:.6} {pose}");
        }
        out
    }

    pub fn write_tum(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tum()).map_err(|e| Error::io(path, e))
    }
}

fn parse_pose_line(line: &str) -> Option<(f64, Se3Pose)> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|tok| tok.parse::<f64>().ok())
        .collect::<Option<_>>()?;
    if vals.len() != 8 || vals[0] < 0.0 {
        return None;
    }
    let pose = Se3Pose::from_tum(
        [vals[1], vals[2], vals[3]],
        [vals[4], vals[5], vals[6], vals[7]],
    )
    .ok()?;
    Some((vals[0], pose))
}

/// Greedy nearest-timestamp association.
///
/// All pairs with `|a_i - b_j| <= max_diff` are ranked by time difference
/// (ties by index) and accepted greedily so each entry is used at most once.
/// The result is ordered by `a` index.
pub fn associate(a: &[f64], b: &[f64], max_diff: f64) -> Vec<(usize, usize)> {
    let mut b_sorted: Vec<(f64, usize)> = b.iter().copied().zip(0..).collect();
    b_sorted.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));

    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, &ta) in a.iter().enumerate() {
        let lo = b_sorted.partition_point(|(tb, _)| *tb < ta - max_diff);
        for &(tb, j) in &b_sorted[lo..] {
            if tb > ta + max_diff {
                break;
            }
            let diff = (ta - tb).abs();
            if diff <= max_diff {
                candidates.push((diff, i, j));
            }
        }
    }
    candidates.sort_by(|x, y| {
        x.0.total_cmp(&y.0)
            .then(x.1.cmp(&y.1))
            .then(x.2.cmp(&y.2))
    });

    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_by(|x, y| a[x.0].partial_cmp(&a[y.0]).unwrap_or(Ordering::Equal).then(x.0.cmp(&y.0)));
    pairs
}
