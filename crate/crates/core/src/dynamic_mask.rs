//! Depth-variance dynamic-object masks.
//!
//! Pipeline per frame:
//! 1. tile the depth image into 3x3 windows and keep one valid pixel from
//!    every window whose depth variance lies in `[tau_a, tau_b]`;
//! 2. cluster those pixels, and for each cluster grow a local mask of pixels
//!    within `tau_d` of the median depth inside the cluster's bounding box,
//!    keeping only its largest 8-connected region (`M_depth`);
//! 3. mark every pixel whose depth lies strictly inside the depth range of
//!    the dynamic pixels (`M_broad`);
//! 4. union with an optional external mask (`M_C`).
//!
//! All masks use 1 = dynamic.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::clustering::dbscan;
use crate::error::{Error, Result};
use crate::raster::{BinaryMask, DepthImage};

/// Variance band and local-mask thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceThresholds {
    /// Lower variance bound, m².
    pub tau_a: f64,
    /// Upper variance bound, m².
    pub tau_b: f64,
    /// Minimum depth counted when taking the cluster median, m.
    pub tau_c: f64,
    /// Half-width of the depth band around the median, m.
    pub tau_d: f64,
}

impl Default for VarianceThresholds {
    fn default() -> Self {
        Self {
            tau_a: 5e-6,
            tau_b: 5e-5,
            tau_c: 0.05,
            tau_d: 0.3,
        }
    }
}

impl VarianceThresholds {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tau_a > 0.0
            && self.tau_a < self.tau_b
            && self.tau_b.is_finite()
            && self.tau_c > 0.0
            && self.tau_c.is_finite()
            && self.tau_d > 0.0
            && self.tau_d.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "thresholds need 0 < tau_a < tau_b, tau_c > 0, tau_d > 0; got {self:?}"
            )))
        }
    }
}

/// Parameters of the full mask predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskParams {
    pub thresholds: VarianceThresholds,
    /// DBSCAN radius over pixel coordinates.
    pub pixel_eps: f64,
    pub pixel_min_pts: usize,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            thresholds: VarianceThresholds::default(),
            pixel_eps: 9.0,
            pixel_min_pts: 4,
        }
    }
}

impl MaskParams {
    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        if !(self.pixel_eps.is_finite() && self.pixel_eps >= 0.0) || self.pixel_min_pts == 0 {
            return Err(Error::InvalidParameter(format!(
                "pixel clustering needs eps >= 0 and min_pts >= 1, got {} / {}",
                self.pixel_eps, self.pixel_min_pts
            )));
        }
        Ok(())
    }
}

/// Dynamic pixels as `(row, col)` with their (positive) depths.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DynamicPixelSet {
    pub pixels: Vec<(usize, usize)>,
    pub depths: Vec<f32>,
}

impl DynamicPixelSet {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn push(&mut self, row: usize, col: usize, depth: f32) {
        self.pixels.push((row, col));
        self.depths.push(depth);
    }
}

/// Population variance of the 3x3 window centered at `(row, col)`, zeros included.
pub fn window_variance(depth: &DepthImage, row: usize, col: usize) -> Result<f64> {
    if row == 0 || col == 0 || row + 1 >= depth.height() || col + 1 >= depth.width() {
        return Err(Error::InvalidParameter(format!(
            "3x3 window at ({row}, {col}) leaves the {}x{} image",
            depth.width(),
            depth.height()
        )));
    }
    Ok(window_variance_unchecked(depth, row, col))
}

fn window_variance_unchecked(depth: &DepthImage, row: usize, col: usize) -> f64 {
    let mut vals = [0f64; 9];
    let mut k = 0;
    for r in row - 1..=row + 1 {
        for c in col - 1..=col + 1 {
            vals[k] = depth.get(c, r) as f64;
            k += 1;
        }
    }
    let mean = vals.iter().sum::<f64>() / 9.0;
    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 9.0
}

/// Window centers visited by the stride-3 traversal: 1, 4, 7, ... while the
/// window stays inside the image.
fn window_centers(len: usize) -> impl Iterator<Item = usize> {
    (1..len.saturating_sub(1)).step_by(3)
}

/// Variances of every traversed window, in traversal order (columns outer).
pub fn window_variances(depth: &DepthImage) -> Vec<f64> {
    let mut out = Vec::new();
    for col in window_centers(depth.width()) {
        for row in window_centers(depth.height()) {
            out.push(window_variance_unchecked(depth, row, col));
        }
    }
    out
}

/// Collects at most one valid pixel per in-band 3x3 window.
pub fn extract_dynamic_pixels(depth: &DepthImage, th: &VarianceThresholds) -> DynamicPixelSet {
    let mut set = DynamicPixelSet::default();
    for col in window_centers(depth.width()) {
        for row in window_centers(depth.height()) {
            let var = window_variance_unchecked(depth, row, col);
            if !(th.tau_a <= var && var <= th.tau_b) {
                continue;
            }
            'window: for r in row - 1..=row + 1 {
                for c in col - 1..=col + 1 {
                    let d = depth.get(c, r);
                    if d > 0.0 {
                        set.push(r, c, d);
                        break 'window;
                    }
                }
            }
        }
    }
    set
}

/// Labels 8-connected regions of set bits. Labels start at 1 in raster order
/// of each region's first pixel; 0 is background. Returns labels and sizes
/// (`sizes[0]` unused).
pub fn label_components(mask: &BinaryMask) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = mask.dims();
    let mut labels = vec![0u32; w * h];
    let mut sizes = vec![0usize];
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if mask.bits()[start] == 0 || labels[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32;
        let mut size = 0;
        labels[start] = id;
        queue.push_back(start);
        while let Some(idx) = queue.pop_front() {
            size += 1;
            let (x, y) = ((idx % w) as i64, (idx / w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let n = ny as usize * w + nx as usize;
                    if mask.bits()[n] != 0 && labels[n] == 0 {
                        labels[n] = id;
                        queue.push_back(n);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Keeps the largest 8-connected region; ties go to the region met first in
/// raster order.
pub fn largest_component(mask: &BinaryMask) -> BinaryMask {
    let (labels, sizes) = label_components(mask);
    let best = sizes
        .iter()
        .enumerate()
        .skip(1)
        .fold(None::<(usize, usize)>, |best, (id, &s)| match best {
            Some((_, bs)) if bs >= s => best,
            _ => Some((id, s)),
        });
    let (w, h) = mask.dims();
    match best {
        None => BinaryMask::zeros(w, h),
        Some((id, _)) => BinaryMask::from_fn(w, h, |x, y| labels[y * w + x] == id as u32),
    }
}

/// Lower median of a non-empty slice.
fn lower_median(vals: &mut [f32]) -> f32 {
    let k = (vals.len() - 1) / 2;
    *vals.select_nth_unstable_by(k, |a, b| a.total_cmp(b)).1
}

/// `M_depth`: union of refined per-cluster local masks.
pub fn depth_mask(
    depth: &DepthImage,
    pk: &DynamicPixelSet,
    th: &VarianceThresholds,
    pixel_eps: f64,
    pixel_min_pts: usize,
) -> Result<BinaryMask> {
    let (w, h) = (depth.width(), depth.height());
    let mut out = BinaryMask::zeros(w, h);
    if pk.is_empty() {
        return Ok(out);
    }
    if let Some(&(r, c)) = pk.pixels.iter().find(|(r, c)| *r >= h || *c >= w) {
        return Err(Error::InvalidParameter(format!(
            "dynamic pixel ({r}, {c}) outside {w}x{h} image"
        )));
    }
    let coords: Vec<[f64; 2]> = pk
        .pixels
        .iter()
        .map(|&(r, c)| [r as f64, c as f64])
        .collect();
    let labeling = dbscan(&coords, pixel_eps, pixel_min_pts)?;

    for members in labeling.clusters() {
        let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
        for &i in &members {
            let (r, c) = pk.pixels[i];
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
        }
        let mut valid: Vec<f32> = (r0..=r1)
            .flat_map(|r| (c0..=c1).map(move |c| (r, c)))
            .map(|(r, c)| depth.get(c, r))
            .filter(|&d| d as f64 > th.tau_c)
            .collect();
        if valid.is_empty() {
            continue;
        }
        let median = lower_median(&mut valid) as f64;
        let local =
            BinaryMask::from_fn(w, h, |x, y| (depth.get(x, y) as f64 - median).abs() <= th.tau_d);
        out.or_assign(&largest_component(&local))?;
    }
    Ok(out)
}

/// `M_broad`: pixels whose depth lies strictly between the smallest and
/// largest dynamic-pixel depth.
pub fn broad_mask(depth: &DepthImage, pk: &DynamicPixelSet) -> BinaryMask {
    let (w, h) = (depth.width(), depth.height());
    if pk.is_empty() {
        return BinaryMask::zeros(w, h);
    }
    let lo = pk.depths.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = pk.depths.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    BinaryMask::from_fn(w, h, |x, y| {
        let d = depth.get(x, y);
        lo < d && d < hi
    })
}

/// `M_C`: union of an optional external mask with the depth and broad masks.
pub fn merge_masks(
    external: Option<&BinaryMask>,
    m_depth: &BinaryMask,
    m_broad: &BinaryMask,
) -> Result<BinaryMask> {
    let mut out = m_depth.clone();
    out.or_assign(m_broad)?;
    if let Some(ext) = external {
        out.or_assign(ext)?;
    }
    Ok(out)
}

/// Binary dilation with a `(2r+1)x(2r+1)` square.
pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = mask.dims();
    let r = radius as i64;
    // Separable: horizontal max, then vertical max.
    let rows = BinaryMask::from_fn(w, h, |x, y| {
        let lo = (x as i64 - r).max(0) as usize;
        let hi = (x as i64 + r).min(w as i64 - 1) as usize;
        (lo..=hi).any(|xx| mask.get(xx, y))
    });
    BinaryMask::from_fn(w, h, |x, y| {
        let lo = (y as i64 - r).max(0) as usize;
        let hi = (y as i64 + r).min(h as i64 - 1) as usize;
        (lo..=hi).any(|yy| rows.get(x, yy))
    })
}

/// All intermediate products of one frame's mask prediction.
#[derive(Debug, Clone)]
pub struct FrameMasks {
    pub dynamic_pixels: DynamicPixelSet,
    pub m_depth: BinaryMask,
    pub m_broad: BinaryMask,
    pub m_c: BinaryMask,
}

/// Runs the full per-frame mask prediction.
pub fn predict_masks(
    depth: &DepthImage,
    external: Option<&BinaryMask>,
    params: &MaskParams,
) -> Result<FrameMasks> {
    params.validate()?;
    if let Some(ext) = external {
        if ext.dims() != (depth.width(), depth.height()) {
            return Err(Error::dims((depth.width(), depth.height()), ext.dims()));
        }
    }
    let pk = extract_dynamic_pixels(depth, &params.thresholds);
    let m_depth = depth_mask(
        depth,
        &pk,
        &params.thresholds,
        params.pixel_eps,
        params.pixel_min_pts,
    )?;
    let m_broad = broad_mask(depth, &pk);
    let m_c = merge_masks(external, &m_depth, &m_broad)?;
    Ok(FrameMasks {
        dynamic_pixels: pk,
        m_depth,
        m_broad,
        m_c,
    })
}

/// Log-spaced histogram of window variances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceHistogram {
    /// Bin edges, `bins + 1` values.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Windows below the first edge (includes zero variance).
    pub underflow: usize,
    pub overflow: usize,
}

impl VarianceHistogram {
    pub fn new(min_var: f64, max_var: f64, bins: usize) -> Result<Self> {
        if !(min_var > 0.0 && max_var > min_var && bins > 0) {
            return Err(Error::InvalidParameter(format!(
                "histogram needs 0 < min < max and bins > 0, got {min_var}, {max_var}, {bins}"
            )));
        }
        let (l0, l1) = (min_var.log10(), max_var.log10());
        let edges = (0..=bins)
            .map(|i| 10f64.powf(l0 + (l1 - l0) * i as f64 / bins as f64))
            .collect();
        Ok(Self {
            edges,
            counts: vec![0; bins],
            underflow: 0,
            overflow: 0,
        })
    }

    pub fn add(&mut self, v: f64) {
        let first = self.edges[0];
        let last = *self.edges.last().unwrap();
        if v < first {
            self.underflow += 1;
        } else if v >= last {
            self.overflow += 1;
        } else {
            let bin = self.edges.partition_point(|e| *e <= v) - 1;
            let last = self.counts.len() - 1;
            self.counts[bin.min(last)] += 1;
        }
    }

    /// CSV with one row per bin; `in_band` flags bins inside `[tau_a, tau_b]`.
    pub fn to_csv(&self, th: &VarianceThresholds) -> String {
        let mut out = String::from("bin_lo,bin_hi,count,in_band\n");
        out.push_str(&format!("0,{:e},{},0\n", self.edges[0], self.underflow));
        for (i, c) in self.counts.iter().enumerate() {
            let (lo, hi) = (self.edges[i], self.edges[i + 1]);
            let in_band = lo >= th.tau_a && hi <= th.tau_b;
            out.push_str(&format!("{lo:e},{hi:e},{c},{}\n", in_band as u8));
        }
        out.push_str(&format!(
            "{:e},inf,{},0\n",
            self.edges.last().unwrap(),
            self.overflow
        ));
        out
    }
}
