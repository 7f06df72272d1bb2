//! Masked reprojection-error minimization over SE(3).
//!
//! Minimizes `sum_i m_i rho(|p_i - pi(R P_i + t)|)` with Levenberg–Marquardt
//! on a left-multiplicative tangent update. `rho` is the Huber loss, or the
//! plain square when no threshold is configured.

use nalgebra::{Matrix2x6, Matrix6, Vector2, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Se3Pose};

/// One 2-D/3-D match. `point` is expressed in the source camera frame,
/// `pixel` in the target image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub pixel: Vector2<f64>,
    pub point: Vector3<f64>,
    pub selected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseConfig {
    /// Huber threshold in pixels; `None` gives plain least squares.
    pub huber_delta: Option<f64>,
    pub max_iterations: usize,
    pub min_step: f64,
    pub inlier_threshold: f64,
}

impl Default for PoseConfig {
    fn default() -> Self {
        Self {
            huber_delta: Some(2.0),
            max_iterations: 20,
            min_step: 1e-8,
            inlier_threshold: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub pose: Se3Pose,
    /// Selected correspondences with residual below the inlier threshold.
    pub inliers: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Robust cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

const MIN_SELECTED: usize = 4;
const BEHIND_CAMERA_COST: f64 = 1e6;

/// `p - pi(R P + t)`, or `None` when the point lands behind the camera.
pub fn reprojection_residual(
    pose: &Se3Pose,
    corr: &Correspondence,
    intr: &CameraIntrinsics,
) -> Option<Vector2<f64>> {
    let x = pose.transform_point(&corr.point);
    if x.z <= 1e-9 {
        return None;
    }
    Some(corr.pixel - intr.project(&x))
}

/// Jacobian of the residual with respect to the tangent `[v, w]` of
/// [`Se3Pose::left_update`], evaluated at zero.
pub fn reprojection_jacobian(
    pose: &Se3Pose,
    point: &Vector3<f64>,
    intr: &CameraIntrinsics,
) -> Matrix2x6<f64> {
    let x = pose.transform_point(point);
    let iz = 1.0 / x.z;
    let iz2 = iz * iz;
    // d(pi)/dX
    let a = [intr.fx * iz, 0.0, -intr.fx * x.x * iz2];
    let b = [0.0, intr.fy * iz, -intr.fy * x.y * iz2];
    // dX/d[v, w] = [I, -[X]x]
    let skew = [[0.0, x.z, -x.y], [-x.z, 0.0, x.x], [x.y, -x.x, 0.0]];
    let mut j = Matrix2x6::zeros();
    for c in 0..3 {
        j[(0, c)] = -a[c];
        j[(1, c)] = -b[c];
        let (mut sa, mut sb) = (0.0, 0.0);
        for r in 0..3 {
            sa += a[r] * skew[r][c];
            sb += b[r] * skew[r][c];
        }
        j[(0, 3 + c)] = -sa;
        j[(1, 3 + c)] = -sb;
    }
    j
}

fn rho(norm: f64, delta: Option<f64>) -> f64 {
    match delta {
        Some(d) if norm > d => 2.0 * d * norm - d * d,
        _ => norm * norm,
    }
}

fn robust_weight(norm: f64, delta: Option<f64>) -> f64 {
    match delta {
        Some(d) if norm > d => d / norm,
        _ => 1.0,
    }
}

fn total_cost(pose: &Se3Pose, corrs: &[Correspondence], intr: &CameraIntrinsics, delta: Option<f64>) -> f64 {
    corrs
        .iter()
        .filter(|c| c.selected)
        .map(|c| match reprojection_residual(pose, c, intr) {
            Some(r) => rho(r.norm(), delta),
            None => BEHIND_CAMERA_COST,
        })
        .sum()
}

/// Refines `init` against the selected correspondences.
pub fn estimate_pose(
    corrs: &[Correspondence],
    intr: &CameraIntrinsics,
    init: &Se3Pose,
    cfg: &PoseConfig,
) -> Result<PoseEstimate> {
    let selected = corrs.iter().filter(|c| c.selected).count();
    if selected < MIN_SELECTED {
        return Err(Error::Degenerate("pose: fewer than 4 selected correspondences"));
    }

    // Canonical order makes every sum independent of the input order.
    let mut sorted: Vec<Correspondence> = corrs.iter().filter(|c| c.selected).copied().collect();
    sorted.sort_by(|a, b| {
        let key = |c: &Correspondence| [c.point.x, c.point.y, c.point.z, c.pixel.x, c.pixel.y];
        key(a).iter().zip(key(b).iter()).fold(std::cmp::Ordering::Equal, |o, (x, y)| o.then(x.total_cmp(y)))
    });
    let corrs = &sorted[..];

    let mut pose = *init;
    pose.rotation.renormalize();
    let mut cost = total_cost(&pose, corrs, intr, cfg.huber_delta);
    let mut cost_history = vec![cost];
    let mut lambda = 1e-4;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations && cost > 0.0 {
        iterations += 1;
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for c in corrs.iter().filter(|c| c.selected) {
            let Some(r) = reprojection_residual(&pose, c, intr) else {
                continue;
            };
            let w = robust_weight(r.norm(), cfg.huber_delta);
            let j = reprojection_jacobian(&pose, &c.point, intr);
            h += w * j.transpose() * j;
            g += w * j.transpose() * r;
        }
        let mut damped = h;
        for k in 0..6 {
            damped[(k, k)] += lambda * h[(k, k)].max(1e-12);
        }
        let Some(step) = damped.cholesky().map(|ch| ch.solve(&(-g))) else {
            lambda *= 10.0;
            continue;
        };
        let candidate = pose.left_update(&step);
        let new_cost = total_cost(&candidate, corrs, intr, cfg.huber_delta);
        if new_cost < cost {
            pose = candidate;
            cost = new_cost;
            cost_history.push(cost);
            lambda = (lambda * 0.1).max(1e-12);
            if step.norm() < cfg.min_step {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if step.norm() < cfg.min_step {
                converged = true;
                break;
            }
        }
    }
    if cost == 0.0 {
        converged = true;
    }

    let inliers = corrs
        .iter()
        .filter(|c| c.selected)
        .filter_map(|c| reprojection_residual(&pose, c, intr))
        .filter(|r| r.norm() < cfg.inlier_threshold)
        .count();
    Ok(PoseEstimate {
        pose,
        inliers,
        converged,
        iterations,
        cost_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(520.0, 515.0, 320.0, 240.0).unwrap()
    }

    fn scene(pose: &Se3Pose, n: usize, seed: u64) -> Vec<Correspondence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let p = Vector3::new(
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(2.0..5.0),
                );
                Correspondence {
                    pixel: intr().project(&pose.transform_point(&p)),
                    point: p,
                    selected: true,
                }
            })
            .collect()
    }

    #[test]
    fn identity_is_fixed_point() {
        let corrs = scene(&Se3Pose::identity(), 20, 1);
        let est = estimate_pose(&corrs, &intr(), &Se3Pose::identity(), &PoseConfig::default()).unwrap();
        assert!(est.pose.rotation_angle() < 1e-8);
        assert!(est.pose.translation.norm() < 1e-8);
    }

    #[test]
    fn too_few_selected_is_degenerate() {
        let mut corrs = scene(&Se3Pose::identity(), 6, 2);
        for c in corrs.iter_mut().skip(3) {
            c.selected = false;
        }
        assert!(matches!(
            estimate_pose(&corrs, &intr(), &Se3Pose::identity(), &PoseConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let pose = Se3Pose::new(
                UnitQuaternion::from_euler_angles(
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                ),
                Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.2..0.2)),
            );
            let point = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(2.0..4.0));
            let corr = Correspondence {
                pixel: Vector2::new(300.0, 200.0),
                point,
                selected: true,
            };
            let j = reprojection_jacobian(&pose, &point, &intr());
            let h = 1e-6;
            for k in 0..6 {
                let mut d = Vector6::zeros();
                d[k] = h;
                let rp = reprojection_residual(&pose.left_update(&d), &corr, &intr()).unwrap();
                d[k] = -h;
                let rm = reprojection_residual(&pose.left_update(&d), &corr, &intr()).unwrap();
                let fd = (rp - rm) / (2.0 * h);
                for r in 0..2 {
                    let scale = fd[r].abs().max(j[(r, k)].abs()).max(1e-3);
                    assert!(((fd[r] - j[(r, k)]) / scale).abs() < 1e-4, "k={k} r={r}");
                }
            }
        }
    }
}
