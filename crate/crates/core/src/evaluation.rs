//! Trajectory accuracy: rigid alignment, absolute trajectory error and
//! relative pose error per second.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotation_distance, Se3Pose};
use crate::trajectory::{associate, Trajectory};

/// An estimated pose matched to its reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosePair {
    pub timestamp: f64,
    pub est: Se3Pose,
    pub gt: Se3Pose,
}

/// Greedy nearest-timestamp pairing of two trajectories. The timestamp of a
/// pair is the estimate's.
pub fn associate_trajectories(est: &Trajectory, gt: &Trajectory, max_diff: f64) -> Result<Vec<PosePair>> {
    let pairs = associate(&est.timestamps(), &gt.timestamps(), max_diff);
    if pairs.is_empty() {
        return Err(Error::NoAssociations { max_diff });
    }
    Ok(pairs
        .into_iter()
        .map(|(i, j)| PosePair {
            timestamp: est.samples()[i].0,
            est: est.samples()[i].1,
            gt: gt.samples()[j].1,
        })
        .collect())
}

/// Rigid transform `T` minimizing `sum |gt_i - T est_i|^2` (scale fixed to 1).
pub fn umeyama_se3(est: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Se3Pose> {
    if est.len() != gt.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} positions", est.len()),
            got: format!("{} positions", gt.len()),
        });
    }
    if est.len() < 3 {
        return Err(Error::Degenerate("geometry: fewer than 3 positions"));
    }
    let n = est.len() as f64;
    let mu_e = est.iter().sum::<Vector3<f64>>() / n;
    let mu_g = gt.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for (e, g) in est.iter().zip(gt) {
        cov += (g - mu_g) * (e - mu_e).transpose();
    }
    cov /= n;

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let largest = s[order[0]];
    // Rank below 2 (collinear or coincident points) leaves a free rotation.
    if largest <= 0.0 || s[order[1]] <= 1e-12 * largest {
        return Err(Error::Degenerate("geometry: rank-deficient covariance"));
    }
    let mut d = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        d[(order[2], order[2])] = -1.0;
    }
    let r = u * d * v_t;
    let t = mu_g - r * mu_e;
    Ok(Se3Pose::from_rotation_matrix(&r, t))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AteResult {
    pub rmse: f64,
    /// Maps estimate positions into the reference frame.
    pub alignment: Se3Pose,
    /// `(timestamp, position error after alignment)`.
    pub errors: Vec<(f64, f64)>,
}

/// Absolute trajectory error after rigid alignment over all associated poses.
pub fn ate(pairs: &[PosePair]) -> Result<AteResult> {
    let est: Vec<Vector3<f64>> = pairs.iter().map(|p| p.est.translation).collect();
    let gt: Vec<Vector3<f64>> = pairs.iter().map(|p| p.gt.translation).collect();
    let errors_under = |g: &Se3Pose| -> Vec<(f64, f64)> {
        pairs
            .iter()
            .map(|p| (p.timestamp, (g.transform_point(&p.est.translation) - p.gt.translation).norm()))
            .collect()
    };
    let sse = |e: &[(f64, f64)]| e.iter().map(|x| x.1 * x.1).sum::<f64>();
    let mut alignment = umeyama_se3(&est, &gt)?;
    let mut errors = errors_under(&alignment);
    // Never worse than no alignment.
    let unaligned = errors_under(&Se3Pose::identity());
    if sse(&unaligned) <= sse(&errors) {
        alignment = Se3Pose::identity();
        errors = unaligned;
    }
    Ok(AteResult {
        rmse: rms(errors.iter().map(|e| e.1)),
        alignment,
        errors,
    })
}

pub fn ate_rmse(est: &Trajectory, gt: &Trajectory, max_diff: f64) -> Result<f64> {
    Ok(ate(&associate_trajectories(est, gt, max_diff)?)?.rmse)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpeResult {
    /// m/s
    pub trans_rmse: f64,
    /// degrees/s
    pub rot_rmse: f64,
    /// `(timestamp, translation m/s, rotation deg/s)` per pose pair.
    pub errors: Vec<(f64, f64, f64)>,
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v * v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Relative pose error over `delta`-second intervals. The partner of pair `i`
/// is the pair nearest to `t_i + delta`, accepted within `max_diff`.
pub fn rpe_pairs(pairs: &[PosePair], delta: f64, max_diff: f64) -> Result<RpeResult> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("rpe delta must be > 0, got {delta}")));
    }
    let times: Vec<f64> = pairs.iter().map(|p| p.timestamp).collect();
    let mut errors = Vec::new();
    for (i, a) in pairs.iter().enumerate() {
        let target = a.timestamp + delta;
        let k = times.partition_point(|&t| t < target);
        let j = [k.checked_sub(1), Some(k)]
            .into_iter()
            .flatten()
            .filter(|&j| j < pairs.len() && j > i)
            .min_by(|&x, &y| (times[x] - target).abs().total_cmp(&(times[y] - target).abs()));
        let Some(j) = j else { continue };
        if (times[j] - target).abs() > max_diff {
            continue;
        }
        let b = &pairs[j];
        let rel_gt = a.gt.inverse().compose(&b.gt);
        let rel_est = a.est.inverse().compose(&b.est);
        let e = rel_gt.inverse().compose(&rel_est);
        errors.push((
            a.timestamp,
            e.translation.norm() / delta,
            rotation_distance(&rel_gt, &rel_est).to_degrees() / delta,
        ));
    }
    if errors.is_empty() {
        return Err(Error::Degenerate("rpe: no pose pairs separated by delta"));
    }
    Ok(RpeResult {
        trans_rmse: rms(errors.iter().map(|e| e.1)),
        rot_rmse: rms(errors.iter().map(|e| e.2)),
        errors,
    })
}

/// `(translation m/s, rotation deg/s)` RMSE.
pub fn rpe(est: &Trajectory, gt: &Trajectory, delta: f64, max_diff: f64) -> Result<(f64, f64)> {
    let r = rpe_pairs(&associate_trajectories(est, gt, max_diff)?, delta, max_diff)?;
    Ok((r.trans_rmse, r.rot_rmse))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ate_rmse: f64,
    pub rpe_trans_rmse: f64,
    pub rpe_rot_rmse: f64,
    pub pairs_used: usize,
    pub rpe_pairs: usize,
}

/// Full evaluation of `est` against `gt`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricReport,
    pub ate: AteResult,
    pub rpe: RpeResult,
}

pub fn evaluate(est: &Trajectory, gt: &Trajectory, delta: f64, max_diff: f64) -> Result<Evaluation> {
    let pairs = associate_trajectories(est, gt, max_diff)?;
    let ate = ate(&pairs)?;
    let rpe = rpe_pairs(&pairs, delta, max_diff)?;
    Ok(Evaluation {
        report: MetricReport {
            ate_rmse: ate.rmse,
            rpe_trans_rmse: rpe.trans_rmse,
            rpe_rot_rmse: rpe.rot_rmse,
            pairs_used: pairs.len(),
            rpe_pairs: rpe.errors.len(),
        },
        ate,
        rpe,
    })
}

impl MetricReport {
    pub fn to_table(&self) -> String {
        let rows = [
            ("ATE RMSE", format!("{:.6}", self.ate_rmse), "m"),
            ("RPE trans RMSE", format!("{:.6}", self.rpe_trans_rmse), "m/s"),
            ("RPE rot RMSE", format!("{:.6}", self.rpe_rot_rmse), "deg/s"),
            ("pairs", self.pairs_used.to_string(), ""),
            ("RPE pairs", self.rpe_pairs.to_string(), ""),
        ];
        let mut out = String::new();
        for (name, value, unit) in rows {
            let _ = writeln!(out, "{}", format!("{name:<16} {value:>12} {unit}").trim_end());
        }
        out
    }
}

impl Evaluation {
    /// One row per associated pose: ATE error and, where defined, RPE errors.
    pub fn per_pair_csv(&self) -> String {
        let mut out = String::from("timestamp,ate_m,rpe_trans_m_per_s,rpe_rot_deg_per_s\n");
        let mut rpe = self.rpe.errors.iter().peekable();
        for &(t, e) in &self.ate.errors {
            let _ = write!(out, "{t:.6},{e:.9}");
            match rpe.peek() {
                Some(&&(rt, tr, rot)) if rt == t => {
                    let _ = writeln!(out, ",{tr:.9},{rot:.9}");
                    rpe.next();
                }
                _ => out.push_str(",,\n"),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    fn helix(n: usize, dt: f64) -> Trajectory {
        Trajectory::new(
            (0..n)
                .map(|i| {
                    let t = i as f64 * dt;
                    let pose = Se3Pose::new(
                        UnitQuaternion::from_euler_angles(0.1 * t, 0.05 * t, 0.3 * t),
                        Vector3::new(t.cos(), t.sin(), 0.2 * t),
                    );
                    (t, pose)
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_trajectories_score_zero() {
        let gt = helix(40, 0.1);
        let ev = evaluate(&gt, &gt, 1.0, 0.02).unwrap();
        assert!(ev.report.ate_rmse < 1e-12);
        assert!(ev.report.rpe_trans_rmse < 1e-12);
        assert_eq!(ev.report.rpe_rot_rmse, 0.0);
        assert_eq!(ev.report.pairs_used, 40);
    }

    #[test]
    fn collinear_positions_are_degenerate() {
        let pts: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(umeyama_se3(&pts, &pts), Err(Error::Degenerate(_))));
    }

    #[test]
    fn mirrored_input_yields_proper_rotation() {
        let gt: Vec<_> = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0], [-1.0, 0.5, 0.2]]
            .iter()
            .map(|p| Vector3::new(p[0], p[1], p[2]))
            .collect();
        let est: Vec<_> = gt.iter().map(|p| Vector3::new(-p.x, p.y, p.z)).collect();
        let t = umeyama_se3(&est, &gt).unwrap();
        assert!((t.rotation_matrix().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_timestamps_are_fatal() {
        let a = helix(5, 0.1);
        let b = Trajectory::new(a.samples().iter().map(|(t, p)| (t + 10.0, *p)).collect()).unwrap();
        assert!(matches!(evaluate(&a, &b, 1.0, 0.02), Err(Error::NoAssociations { .. })));
    }

    #[test]
    fn short_span_has_no_rpe_pairs() {
        let a = helix(5, 0.1);
        assert!(rpe(&a, &a, 1.0, 0.02).is_err());
    }

    #[test]
    fn table_and_csv_render() {
        let gt = helix(30, 0.1);
        let ev = evaluate(&gt, &gt, 1.0, 0.02).unwrap();
        assert!(ev.report.to_table().contains("ATE RMSE"));
        let csv = ev.per_pair_csv();
        assert_eq!(csv.lines().count(), 31);
        assert!(csv.lines().last().unwrap().ends_with(",,"));
    }
}
