//! Exact DBSCAN with Euclidean distance.
//!
//! Neighborhoods are found by linear scan, which keeps the labeling fully
//! deterministic. Clusters are numbered in the order their first core point
//! is met while scanning the input, and a border point belongs to the first
//! cluster that reaches it.

use std::collections::VecDeque;

use crate::error::{Error, Result};

pub const NOISE: isize = -1;

/// Per-point cluster labels: `-1` is noise, `0..cluster_count` are clusters.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClusterLabeling {
    pub labels: Vec<isize>,
    pub cluster_count: usize,
}

impl ClusterLabeling {
    pub fn is_noise(&self, i: usize) -> bool {
        self.labels[i] == NOISE
    }

    pub fn noise(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.is_noise(i)).collect()
    }

    /// Member indices of each cluster, in input order.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cluster_count];
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= 0 {
                out[l as usize].push(i);
            }
        }
        out
    }
}

#[inline]
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn region<P: AsRef<[f64]>>(points: &[P], i: usize, eps2: f64, out: &mut Vec<usize>) {
    out.clear();
    let p = points[i].as_ref();
    out.extend(
        points
            .iter()
            .enumerate()
            .filter(|(_, q)| dist2(p, q.as_ref()) <= eps2)
            .map(|(j, _)| j),
    );
}

/// Clusters `points` with neighborhood radius `eps` (inclusive) and density
/// threshold `min_pts` (the point itself counts).
pub fn dbscan<P: AsRef<[f64]>>(points: &[P], eps: f64, min_pts: usize) -> Result<ClusterLabeling> {
    if points.is_empty() {
        return Ok(ClusterLabeling::default());
    }
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::InvalidParameter(format!("dbscan radius {eps}")));
    }
    if min_pts == 0 {
        return Err(Error::InvalidParameter("dbscan min_pts must be >= 1".into()));
    }
    let dim = points[0].as_ref().len();
    if let Some(bad) = points.iter().find(|p| p.as_ref().len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: format!("{dim}-d point"),
            got: format!("{}-d point", bad.as_ref().len()),
        });
    }

    let n = points.len();
    let eps2 = eps * eps;
    let mut labels = vec![NOISE; n];
    let mut visited = vec![false; n];
    let mut cluster = 0usize;
    let mut neigh = Vec::new();
    let mut queue = VecDeque::new();

    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        region(points, i, eps2, &mut neigh);
        if neigh.len() < min_pts {
            continue;
        }
        let id = cluster as isize;
        cluster += 1;
        labels[i] = id;
        queue.clear();
        queue.extend(neigh.iter().copied());
        while let Some(q) = queue.pop_front() {
            if labels[q] == NOISE {
                labels[q] = id;
            }
            if visited[q] {
                continue;
            }
            visited[q] = true;
            region(points, q, eps2, &mut neigh);
            if neigh.len() >= min_pts {
                queue.extend(neigh.iter().copied().filter(|&j| !visited[j] || labels[j] == NOISE));
            }
        }
    }

    Ok(ClusterLabeling {
        labels,
        cluster_count: cluster,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_separated_blobs() {
        let mut pts = Vec::new();
        for base in [0.0, 100.0] {
            for k in 0..5 {
                pts.push(vec![base + 0.1 * k as f64, base]);
            }
        }
        let l = dbscan(&pts, 1.0, 3).unwrap();
        assert_eq!(l.cluster_count, 2);
        assert!(l.noise().is_empty());
        assert_eq!(l.labels, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn lone_point_is_noise() {
        let l = dbscan(&[[3.0, 4.0]], 1.0, 2).unwrap();
        assert_eq!(l.labels, vec![NOISE]);
        assert_eq!(l.cluster_count, 0);
    }

    #[test]
    fn empty_input_is_empty_labeling() {
        let pts: Vec<Vec<f64>> = Vec::new();
        assert_eq!(dbscan(&pts, 1.0, 3).unwrap(), ClusterLabeling::default());
    }

    #[test]
    fn dimension_mismatch_is_fatal() {
        let pts = vec![vec![0.0, 0.0], vec![1.0]];
        assert!(matches!(
            dbscan(&pts, 1.0, 1),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn border_point_goes_to_first_cluster() {
        // The point at 1.0 is a border of both clusters.
        let pts: Vec<[f64; 1]> = vec![
            [-0.1], [0.0], [0.1], [0.2], [1.0], [1.8], [1.9], [2.0], [2.1],
        ];
        let l = dbscan(&pts, 0.85, 4).unwrap();
        assert_eq!(l.cluster_count, 2);
        assert_eq!(l.labels[4], 0);
        assert_eq!(l.labels[5], 1);
    }
}
