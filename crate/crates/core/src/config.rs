//! Run settings: `key = value` config files, defaults and validation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::dynamic_mask::{MaskParams, VarianceThresholds};
use crate::error::{Error, Result};
use crate::mapping::MapConfig;
use crate::pipeline::PipelineConfig;
use crate::raster::DEFAULT_DEPTH_SCALE;
use crate::resampler::ResampleConfig;
use crate::tracking::{PoseConfig, TrackConfig};

pub const KEYS: &[&str] = &[
    "tau-a",
    "tau-b",
    "tau-c",
    "tau-d",
    "depth-scale",
    "pixel-eps",
    "pixel-minpts",
    "epochs",
    "seed",
    "intrinsics",
    "ext-mask-dir",
    "no-robust-loss",
    "resample",
    "warm-start",
    "no-mask",
    "dilate",
    "voxel",
    "stride",
    "threads",
    "ascii-ply",
];

/// Parses `key = value` lines; `#` starts a comment. Keys are normalized to
/// their flag spelling (`tau_a` and `tau-a` are the same key).
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                context: format!("config line {}", n + 1),
                message: format!("expected key = value, got {raw:?}"),
            });
        };
        let key = k.trim().replace('_', "-");
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::Parse {
                context: format!("config line {}", n + 1),
                message: format!("unknown key {key:?}"),
            });
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// Command-line overrides; `None` / `false` means "not given".
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub tau_a: Option<f64>,
    pub tau_b: Option<f64>,
    pub tau_c: Option<f64>,
    pub tau_d: Option<f64>,
    pub depth_scale: Option<f32>,
    pub pixel_eps: Option<f64>,
    pub pixel_minpts: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub intrinsics: Option<PathBuf>,
    pub ext_mask_dir: Option<PathBuf>,
    pub no_robust_loss: bool,
    pub resample: bool,
    pub warm_start: bool,
    pub no_mask: bool,
    pub dilate: Option<usize>,
    pub voxel: Option<f64>,
    pub stride: Option<usize>,
    pub threads: Option<usize>,
    pub ascii_ply: bool,
}

/// Fully resolved settings, echoed to `run_config.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub tau_a: f64,
    pub tau_b: f64,
    pub tau_c: f64,
    pub tau_d: f64,
    pub depth_scale: f32,
    pub pixel_eps: f64,
    pub pixel_minpts: usize,
    pub epochs: usize,
    pub seed: u64,
    pub intrinsics: Option<PathBuf>,
    pub ext_mask_dir: Option<PathBuf>,
    pub robust_loss: bool,
    pub resample: bool,
    pub warm_start: bool,
    pub masking: bool,
    pub dilate: usize,
    pub voxel: f64,
    pub stride: usize,
    pub threads: Option<usize>,
    pub ascii_ply: bool,
}

impl Default for Settings {
    fn default() -> Self {
        let th = VarianceThresholds::default();
        let mp = MaskParams::default();
        let rc = ResampleConfig::default();
        Self {
            tau_a: th.tau_a,
            tau_b: th.tau_b,
            tau_c: th.tau_c,
            tau_d: th.tau_d,
            depth_scale: DEFAULT_DEPTH_SCALE,
            pixel_eps: mp.pixel_eps,
            pixel_minpts: mp.pixel_min_pts,
            epochs: rc.epochs,
            seed: rc.seed,
            intrinsics: None,
            ext_mask_dir: None,
            robust_loss: true,
            resample: false,
            warm_start: false,
            masking: true,
            dilate: 3,
            voxel: 0.01,
            stride: 2,
            threads: None,
            ascii_ply: false,
        }
    }
}

fn from_file<T: FromStr>(file: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    file.get(key)
        .map(|v| {
            v.parse::<T>().map_err(|_| Error::Parse {
                context: format!("config key {key}"),
                message: format!("cannot parse {v:?}"),
            })
        })
        .transpose()
}

/// Precedence: command line, then config file, then default.
pub fn resolve(cli: &Overrides, file: &BTreeMap<String, String>) -> Result<Settings> {
    let d = Settings::default();
    macro_rules! pick {
        ($field:ident, $key:literal) => {
            match cli.$field.clone() {
                Some(v) => v,
                None => from_file(file, $key)?.unwrap_or(d.$field),
            }
        };
    }
    macro_rules! pick_opt {
        ($field:ident, $key:literal) => {
            match cli.$field.clone() {
                Some(v) => Some(v),
                None => from_file(file, $key)?,
            }
        };
    }
    let flag = |given: bool, key: &str| -> Result<bool> { Ok(given || from_file(file, key)?.unwrap_or(false)) };
    let s = Settings {
        tau_a: pick!(tau_a, "tau-a"),
        tau_b: pick!(tau_b, "tau-b"),
        tau_c: pick!(tau_c, "tau-c"),
        tau_d: pick!(tau_d, "tau-d"),
        depth_scale: pick!(depth_scale, "depth-scale"),
        pixel_eps: pick!(pixel_eps, "pixel-eps"),
        pixel_minpts: pick!(pixel_minpts, "pixel-minpts"),
        epochs: pick!(epochs, "epochs"),
        seed: pick!(seed, "seed"),
        intrinsics: pick_opt!(intrinsics, "intrinsics"),
        ext_mask_dir: pick_opt!(ext_mask_dir, "ext-mask-dir"),
        robust_loss: !flag(cli.no_robust_loss, "no-robust-loss")?,
        resample: flag(cli.resample, "resample")?,
        warm_start: flag(cli.warm_start, "warm-start")?,
        masking: !flag(cli.no_mask, "no-mask")?,
        dilate: pick!(dilate, "dilate"),
        voxel: pick!(voxel, "voxel"),
        stride: pick!(stride, "stride"),
        threads: pick_opt!(threads, "threads"),
        ascii_ply: flag(cli.ascii_ply, "ascii-ply")?,
    };
    s.validate()?;
    Ok(s)
}

impl Settings {
    pub fn validate(&self) -> Result<()> {
        self.mask_params().validate()?;
        self.resample_config().validate()?;
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.depth_scale > 0.0) || !self.depth_scale.is_finite() {
            return bad(format!("depth-scale must be > 0, got {}", self.depth_scale));
        }
        if !(self.voxel >= 0.0) || !self.voxel.is_finite() {
            return bad(format!("voxel must be >= 0, got {}", self.voxel));
        }
        if self.stride == 0 {
            return bad("stride must be >= 1".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be >= 1".into());
        }
        Ok(())
    }

    pub fn mask_params(&self) -> MaskParams {
        MaskParams {
            thresholds: VarianceThresholds {
                tau_a: self.tau_a,
                tau_b: self.tau_b,
                tau_c: self.tau_c,
                tau_d: self.tau_d,
            },
            pixel_eps: self.pixel_eps,
            pixel_min_pts: self.pixel_minpts,
        }
    }

    pub fn resample_config(&self) -> ResampleConfig {
        ResampleConfig {
            epochs: self.epochs,
            seed: self.seed,
            ..ResampleConfig::default()
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        let d = PipelineConfig::default();
        PipelineConfig {
            masking: self.masking,
            mask: self.mask_params(),
            ext_mask_dir: self.ext_mask_dir.clone(),
            dilate: self.dilate,
            depth_scale: self.depth_scale,
            track: TrackConfig {
                pose: PoseConfig {
                    huber_delta: self.robust_loss.then_some(2.0),
                    ..PoseConfig::default()
                },
                resample: self.resample.then(|| self.resample_config()),
                warm_start: self.warm_start,
                ..TrackConfig::default()
            },
            map: MapConfig {
                stride: self.stride,
                ..MapConfig::default()
            },
            voxel: self.voxel,
            binary_ply: !self.ascii_ply,
            ..d
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_normalizes_keys() {
        let m = parse_config("# comment\ntau_a = 1e-6\n\nvoxel=0.02 # trailing\n").unwrap();
        assert_eq!(m["tau-a"], "1e-6");
        assert_eq!(m["voxel"], "0.02");
        assert!(parse_config("bogus = 1\n").is_err());
        assert!(parse_config("tau-a 1\n").is_err());
    }

    #[test]
    fn precedence_cli_over_file_over_default() {
        let file = parse_config("tau-a = 1e-6\ntau-b = 1e-4\nresample = true\n").unwrap();
        let cli = Overrides {
            tau_a: Some(2e-6),
            ..Default::default()
        };
        let s = resolve(&cli, &file).unwrap();
        assert_eq!(s.tau_a, 2e-6);
        assert_eq!(s.tau_b, 1e-4);
        assert_eq!(s.tau_c, 0.05);
        assert!(s.resample);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let file = parse_config("tau-a = 1e-3\n").unwrap();
        assert!(resolve(&Overrides::default(), &file).is_err());
        let file = parse_config("stride = two\n").unwrap();
        assert!(resolve(&Overrides::default(), &file).is_err());
    }
}
