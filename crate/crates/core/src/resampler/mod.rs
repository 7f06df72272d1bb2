//! Keypoint resampling.
//!
//! Keypoints are embedded into a 2-D latent space by a small autoencoder,
//! clustered there with DBSCAN using a quantile-adaptive radius, and every
//! cluster is thinned by a genetic max-min subset search. Noise points pass
//! through untouched.

pub mod autoencoder;
pub mod genetic;

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use autoencoder::{train_autoencoder, Autoencoder, TrainedAutoencoder};
pub use genetic::{ga_resample_cluster, GaConfig};

use crate::clustering::dbscan;
use crate::error::{Error, Result};

/// Detector keypoint with its six descriptive attributes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    /// Column, pixels.
    pub x: f64,
    /// Row, pixels.
    pub y: f64,
    /// Diameter of the support region, pixels.
    pub size: f64,
    /// Main orientation in degrees `[0, 360)`, or -1 when unset.
    pub angle: f64,
    /// Detector response.
    pub response: f64,
    /// Pyramid level.
    pub octave: u32,
}

impl Keypoint {
    pub fn at(x: f64, y: f64) -> Self {
        Self {
            x,
            y,
            size: 7.0,
            angle: -1.0,
            response: 0.0,
            octave: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleConfig {
    pub epochs: usize,
    /// First quantile of the sorted squared latent distances tried as radius.
    pub q0: f64,
    pub q_step: f64,
    pub q_cap: f64,
    pub learning_rate: f64,
    pub seed: u64,
    pub ga: GaConfig,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            q0: 0.05,
            q_step: 0.05,
            q_cap: 0.9,
            learning_rate: 0.01,
            seed: 42,
            ga: GaConfig::default(),
        }
    }
}

impl ResampleConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epochs >= 1
            && self.q0 > 0.0
            && self.q0 <= self.q_cap
            && self.q_cap <= 1.0
            && self.q_step > 0.0
            && self.learning_rate > 0.0
            && self.learning_rate.is_finite();
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "invalid resample config {self:?}"
            )));
        }
        self.ga.validate()
    }
}

/// DBSCAN density threshold: keypoint attribute count + 1.
pub const MIN_CLUSTER_POINTS: usize = autoencoder::INPUT_DIM + 1;

/// Quantile-adaptive radius over squared pairwise latent distances.
///
/// Starting at `q0`, takes `D[floor(|D| q)]` of the ascending distance list and
/// advances `q` by `q_step` while the result is zero and `q <= q_cap`.
pub fn adaptive_radius(latents: &[[f64; 2]], cfg: &ResampleConfig) -> f64 {
    let n = latents.len();
    if n < 2 {
        return 0.0;
    }
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let dx = latents[i][0] - latents[j][0];
            let dy = latents[i][1] - latents[j][1];
            d.push(dx * dx + dy * dy);
        }
    }
    d.sort_by(|a, b| a.total_cmp(b));
    let mut r = 0.0;
    for step in 0.. {
        let q = cfg.q0 + step as f64 * cfg.q_step;
        if q > cfg.q_cap + 1e-12 {
            break;
        }
        let idx = ((d.len() as f64 * q).floor() as usize).min(d.len() - 1);
        r = d[idx];
        if r > 0.0 {
            break;
        }
    }
    r
}

/// How each input keypoint fared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KeypointClass {
    /// Not in any latent cluster; kept as is.
    Uniform,
    /// Member of a cluster, kept by the subset search.
    ClusterKept,
    /// Member of a cluster, dropped as redundant.
    Removed,
}

#[derive(Debug, Clone)]
pub struct ResampleOutcome {
    pub classes: Vec<KeypointClass>,
    /// Squared-distance radius from [`adaptive_radius`] (0 when skipped).
    pub radius: f64,
    pub cluster_count: usize,
    pub loss_history: Vec<f64>,
    pub network: Option<Autoencoder>,
}

impl ResampleOutcome {
    fn identity(n: usize) -> Self {
        Self {
            classes: vec![KeypointClass::Uniform; n],
            radius: 0.0,
            cluster_count: 0,
            loss_history: Vec::new(),
            network: None,
        }
    }

    /// Indices of surviving keypoints, ascending.
    pub fn kept(&self) -> Vec<usize> {
        self.classes
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != KeypointClass::Removed)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn removed_count(&self) -> usize {
        self.classes
            .iter()
            .filter(|c| **c == KeypointClass::Removed)
            .count()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Per-cluster GA seed derived from the run seed.
pub fn cluster_seed(seed: u64, cluster: usize) -> u64 {
    splitmix64(seed ^ splitmix64(cluster as u64))
}

/// Full resampling pass. Sets smaller than `MIN_CLUSTER_POINTS + 1`, a zero
/// radius or an absence of clusters leave the input unchanged.
pub fn resample_keypoints_detailed(
    keypoints: &[Keypoint],
    cfg: &ResampleConfig,
    warm_start: Option<&Autoencoder>,
) -> Result<ResampleOutcome> {
    cfg.validate()?;
    let n = keypoints.len();
    if n < MIN_CLUSTER_POINTS + 1 {
        return Ok(ResampleOutcome::identity(n));
    }
    let trained = train_autoencoder(keypoints, cfg, warm_start)?;
    let radius = adaptive_radius(&trained.latents, cfg);
    let mut outcome = ResampleOutcome {
        loss_history: trained.loss_history,
        network: Some(trained.network),
        radius,
        ..ResampleOutcome::identity(n)
    };
    if radius <= 0.0 {
        return Ok(outcome);
    }
    // The radius is a squared distance, so neighbors satisfy |a-b| <= sqrt(r).
    let labeling = dbscan(&trained.latents, radius.sqrt(), MIN_CLUSTER_POINTS)?;
    outcome.cluster_count = labeling.cluster_count;

    let clusters = labeling.clusters();
    let survivors: Vec<Vec<usize>> = clusters
        .par_iter()
        .enumerate()
        .map(|(id, members)| {
            let pts: Vec<Keypoint> = members.iter().map(|&i| keypoints[i]).collect();
            ga_resample_cluster(&pts, &cfg.ga, cluster_seed(cfg.seed, id))
                .into_iter()
                .map(|local| members[local])
                .collect()
        })
        .collect();
    for (members, kept) in clusters.iter().zip(&survivors) {
        for &i in members {
            outcome.classes[i] = KeypointClass::Removed;
        }
        for &i in kept {
            outcome.classes[i] = KeypointClass::ClusterKept;
        }
    }
    Ok(outcome)
}

/// Returns the surviving subset of `keypoints`, in input order.
pub fn resample_keypoints(keypoints: &[Keypoint], cfg: &ResampleConfig) -> Result<Vec<Keypoint>> {
    let outcome = resample_keypoints_detailed(keypoints, cfg, None)?;
    Ok(outcome.kept().into_iter().map(|i| keypoints[i]).collect())
}

/// Reads `x,y,d,theta,sigma,lambda` CSV rows (an optional header is skipped).
pub fn read_keypoints_csv(path: &Path) -> Result<Vec<Keypoint>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_keypoints_csv(&text)
}

pub fn parse_keypoints_csv(text: &str) -> Result<Vec<Keypoint>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Option<Vec<f64>> = fields.iter().map(|f| f.parse().ok()).collect();
        let vals = match parsed {
            Some(v) if v.len() == 6 => v,
            _ if lineno == 0 => continue,
            _ => {
                return Err(Error::Parse {
                    context: format!("keypoint csv line {}", lineno + 1),
                    message: format!("expected 6 numeric fields, got {line:?}"),
                })
            }
        };
        if vals[5] < 0.0 || vals[2] <= 0.0 {
            return Err(Error::Parse {
                context: format!("keypoint csv line {}", lineno + 1),
                message: "diameter must be > 0 and level >= 0".into(),
            });
        }
        out.push(Keypoint {
            x: vals[0],
            y: vals[1],
            size: vals[2],
            angle: vals[3],
            response: vals[4],
            octave: vals[5] as u32,
        });
    }
    Ok(out)
}

pub fn keypoints_to_csv(keypoints: &[Keypoint]) -> String {
    let mut out = String::from("x,y,d,theta,sigma,lambda\n");
    for k in keypoints {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            k.x, k.y, k.size, k.angle, k.response, k.octave
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radius_three_points() {
        let r = adaptive_radius(&[[0.0, 0.0], [0.0, 1.0], [0.0, 2.0]], &ResampleConfig::default());
        assert_eq!(r, 1.0);
    }

    #[test]
    fn radius_all_equal_is_zero() {
        let pts = vec![[0.3, -0.2]; 10];
        assert_eq!(adaptive_radius(&pts, &ResampleConfig::default()), 0.0);
    }

    #[test]
    fn radius_advances_past_zeros() {
        // 6 of the 10 pairs are duplicates -> zero until q = 0.6.
        let pts = vec![[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1.0, 0.0]];
        let r = adaptive_radius(&pts, &ResampleConfig::default());
        assert_eq!(r, 1.0);
    }

    #[test]
    fn small_sets_pass_through() {
        let ks: Vec<_> = (0..5).map(|i| Keypoint::at(i as f64, 0.0)).collect();
        assert_eq!(resample_keypoints(&ks, &ResampleConfig::default()).unwrap(), ks);
    }

    #[test]
    fn csv_round_trip() {
        let ks = vec![
            Keypoint {
                x: 1.5,
                y: 2.0,
                size: 7.0,
                angle: -1.0,
                response: 0.25,
                octave: 1,
            },
            Keypoint::at(10.0, 20.0),
        ];
        let parsed = parse_keypoints_csv(&keypoints_to_csv(&ks)).unwrap();
        assert_eq!(parsed, ks);
        assert!(parse_keypoints_csv("1,2,3\n").is_ok());
        assert!(parse_keypoints_csv("x\n1,2,3\n").is_err());
    }

    #[test]
    fn cluster_seeds_differ() {
        assert_ne!(cluster_seed(42, 0), cluster_seed(42, 1));
        assert_eq!(cluster_seed(42, 3), cluster_seed(42, 3));
    }
}
