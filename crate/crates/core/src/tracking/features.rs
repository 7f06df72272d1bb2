//! Shi–Tomasi corners over a two-level pyramid.

use crate::raster::GrayImage;
use crate::resampler::Keypoint;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    /// Half-size of the structure-tensor window.
    pub block_radius: usize,
    /// Relative response threshold w.r.t. the strongest corner.
    pub quality: f32,
    /// Absolute response floor.
    pub min_response: f32,
    /// Minimum spacing of accepted corners in base-level pixels.
    pub min_distance: f64,
    pub levels: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            block_radius: 3,
            quality: 0.01,
            min_response: 1.0,
            min_distance: 5.0,
            levels: 2,
        }
    }
}

/// Sobel gradients; border pixels get zero.
pub(crate) fn sobel(img: &GrayImage) -> (Vec<f32>, Vec<f32>) {
    let (w, h) = (img.width(), img.height());
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let p = |dx: isize, dy: isize| {
                img.get((x as isize + dx) as usize, (y as isize + dy) as usize)
            };
            gx[y * w + x] = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1) - p(-1, -1) - 2.0 * p(-1, 0)
                - p(-1, 1))
                / 8.0;
            gy[y * w + x] = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1) - p(-1, -1) - 2.0 * p(0, -1)
                - p(1, -1))
                / 8.0;
        }
    }
    (gx, gy)
}

/// Minimum-eigenvalue response map of the Gaussian-weighted structure tensor.
fn min_eigen_response(gx: &[f32], gy: &[f32], w: usize, h: usize, radius: usize) -> Vec<f32> {
    let mut resp = vec![0.0; w * h];
    let margin = radius + 1;
    if w <= 2 * margin || h <= 2 * margin {
        return resp;
    }
    let sigma = radius as f32 / 2.0;
    let r = radius as isize;
    let mut weights = Vec::with_capacity((2 * radius + 1).pow(2));
    for dy in -r..=r {
        for dx in -r..=r {
            weights.push((-((dx * dx + dy * dy) as f32) / (2.0 * sigma * sigma)).exp());
        }
    }
    let norm: f32 = weights.iter().sum();
    for y in margin..h - margin {
        for x in margin..w - margin {
            let (mut a, mut b, mut c) = (0f32, 0f32, 0f32);
            let mut k = 0;
            for yy in y - radius..=y + radius {
                for xx in x - radius..=x + radius {
                    let i = yy * w + xx;
                    let wt = weights[k];
                    k += 1;
                    a += wt * gx[i] * gx[i];
                    b += wt * gx[i] * gy[i];
                    c += wt * gy[i] * gy[i];
                }
            }
            let (a, b, c) = (a / norm, b / norm, c / norm);
            resp[y * w + x] = 0.5 * (a + c) - ((0.5 * (a - c)).powi(2) + b * b).sqrt();
        }
    }
    resp
}

/// Sub-pixel corner position: the point `q` minimizing
/// `sum_i (g_i . (q - p_i))^2` over the window around `(x, y)`.
fn refine_corner(gx: &[f32], gy: &[f32], w: usize, h: usize, x: usize, y: usize, radius: usize) -> (f64, f64) {
    let r = radius as isize;
    let (mut a, mut b, mut c, mut bx, mut by) = (0f64, 0f64, 0f64, 0f64, 0f64);
    for dy in -r..=r {
        for dx in -r..=r {
            let (xx, yy) = (x as isize + dx, y as isize + dy);
            if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
                continue;
            }
            let i = yy as usize * w + xx as usize;
            let (u, v) = (gx[i] as f64, gy[i] as f64);
            let (px, py) = (xx as f64, yy as f64);
            a += u * u;
            b += u * v;
            c += v * v;
            bx += u * u * px + u * v * py;
            by += u * v * px + v * v * py;
        }
    }
    let det = a * c - b * b;
    if det.abs() < 1e-9 * (a + c).powi(2).max(1e-30) {
        return (x as f64, y as f64);
    }
    let qx = (c * bx - b * by) / det;
    let qy = (a * by - b * bx) / det;
    if (qx - x as f64).abs() > radius as f64 || (qy - y as f64).abs() > radius as f64 {
        return (x as f64, y as f64);
    }
    (qx, qy)
}

/// Intensity-centroid orientation in degrees `[0, 360)`.
fn orientation(img: &GrayImage, x: usize, y: usize, radius: usize) -> f64 {
    let r = radius as isize;
    let (mut m10, mut m01) = (0f64, 0f64);
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy > r * r {
                continue;
            }
            let (xx, yy) = (x as isize + dx, y as isize + dy);
            if xx < 0 || yy < 0 || xx >= img.width() as isize || yy >= img.height() as isize {
                continue;
            }
            let v = img.get(xx as usize, yy as usize) as f64;
            m10 += dx as f64 * v;
            m01 += dy as f64 * v;
        }
    }
    if m10 == 0.0 && m01 == 0.0 {
        return 0.0;
    }
    let deg = m01.atan2(m10).to_degrees();
    if deg < 0.0 {
        deg + 360.0
    } else {
        deg
    }
}

struct Candidate {
    x: f64,
    y: f64,
    response: f32,
    level: u32,
    px: usize,
    py: usize,
}

/// Detects up to `max_count` corners ordered by descending response.
pub fn detect_keypoints(gray: &GrayImage, max_count: usize) -> Vec<Keypoint> {
    detect_keypoints_with(gray, max_count, &DetectorConfig::default())
}

pub fn detect_keypoints_with(gray: &GrayImage, max_count: usize, cfg: &DetectorConfig) -> Vec<Keypoint> {
    let mut pyramid = vec![gray.clone()];
    for _ in 1..cfg.levels.max(1) {
        let next = pyramid.last().unwrap().half();
        pyramid.push(next);
    }

    let mut cands = Vec::new();
    let mut max_resp = 0f32;
    for (level, img) in pyramid.iter().enumerate() {
        let (w, h) = (img.width(), img.height());
        let (gx, gy) = sobel(img);
        let resp = min_eigen_response(&gx, &gy, w, h, cfg.block_radius);
        let scale = (1usize << level) as f64;
        for y in 1..h.saturating_sub(1) {
            for x in 1..w.saturating_sub(1) {
                let r = resp[y * w + x];
                if r <= cfg.min_response {
                    continue;
                }
                // 3x3 non-maximum suppression; plateaus resolved in raster order.
                let mut is_max = true;
                'nms: for dy in 0..3 {
                    for dx in 0..3 {
                        let (xx, yy) = (x + dx - 1, y + dy - 1);
                        if (xx, yy) == (x, y) {
                            continue;
                        }
                        let o = resp[yy * w + xx];
                        let earlier = (yy, xx) < (y, x);
                        if o > r || (earlier && o == r) {
                            is_max = false;
                            break 'nms;
                        }
                    }
                }
                if !is_max {
                    continue;
                }
                max_resp = max_resp.max(r);
                let (sx, sy) = refine_corner(&gx, &gy, w, h, x, y, cfg.block_radius + 1);
                cands.push(Candidate {
                    x: (sx + 0.5) * scale - 0.5,
                    y: (sy + 0.5) * scale - 0.5,
                    response: r,
                    level: level as u32,
                    px: x,
                    py: y,
                });
            }
        }
    }

    let floor = max_resp * cfg.quality;
    cands.retain(|c| c.response >= floor);
    cands.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.level.cmp(&b.level))
            .then(a.py.cmp(&b.py))
            .then(a.px.cmp(&b.px))
    });

    let min_d2 = cfg.min_distance * cfg.min_distance;
    let mut accepted: Vec<Candidate> = Vec::new();
    for c in cands {
        if accepted.len() >= max_count {
            break;
        }
        let clear = accepted
            .iter()
            .all(|a| (a.x - c.x).powi(2) + (a.y - c.y).powi(2) >= min_d2);
        if clear {
            accepted.push(c);
        }
    }

    let window = 2 * cfg.block_radius + 1;
    accepted
        .into_iter()
        .map(|c| Keypoint {
            x: c.x,
            y: c.y,
            size: (window << c.level) as f64,
            angle: orientation(&pyramid[c.level as usize], c.px, c.py, cfg.block_radius),
            response: c.response as f64,
            octave: c.level,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_no_corners() {
        let g = GrayImage::from_fn(64, 48, |_, _| 128.0);
        assert!(detect_keypoints(&g, 100).is_empty());
    }

    #[test]
    fn square_corners_are_strongest() {
        // White square covering pixels 20..=43; its corners sit at 19.5 / 43.5.
        let g = GrayImage::from_fn(64, 64, |x, y| {
            if (20..44).contains(&x) && (20..44).contains(&y) {
                255.0
            } else {
                0.0
            }
        });
        let kps = detect_keypoints(&g, 4);
        assert_eq!(kps.len(), 4);
        let corners = [(19.5, 19.5), (43.5, 19.5), (19.5, 43.5), (43.5, 43.5)];
        for (cx, cy) in corners {
            assert!(
                kps.iter()
                    .any(|k| (k.x - cx).abs() <= 1.0 && (k.y - cy).abs() <= 1.0),
                "no keypoint near ({cx}, {cy}): {kps:?}"
            );
        }
        for k in &kps {
            assert!(k.size > 0.0 && (0.0..360.0).contains(&k.angle));
        }
    }

    #[test]
    fn checkerboard_interior_corners() {
        let (cols, rows, cell) = (8usize, 6usize, 12usize);
        let margin = 10;
        let g = GrayImage::from_fn(cols * cell + 2 * margin, rows * cell + 2 * margin, |x, y| {
            if x < margin || y < margin || x >= margin + cols * cell || y >= margin + rows * cell {
                return 128.0;
            }
            let (cx, cy) = ((x - margin) / cell, (y - margin) / cell);
            if (cx + cy) % 2 == 0 {
                230.0
            } else {
                25.0
            }
        });
        let kps = detect_keypoints(&g, 1000);
        let mut found = 0;
        for i in 1..cols {
            for j in 1..rows {
                let (cx, cy) = ((margin + i * cell) as f64 - 0.5, (margin + j * cell) as f64 - 0.5);
                if kps
                    .iter()
                    .any(|k| (k.x - cx).abs() <= 1.5 && (k.y - cy).abs() <= 1.5)
                {
                    found += 1;
                }
            }
        }
        assert_eq!(found, (rows - 1) * (cols - 1));
        assert!(kps.len() >= (rows - 1) * (cols - 1));
    }

    #[test]
    fn detection_is_deterministic() {
        let g = GrayImage::from_fn(80, 60, |x, y| ((x * 7 + y * 13) % 29) as f32 * 8.0);
        assert_eq!(detect_keypoints(&g, 50), detect_keypoints(&g, 50));
    }
}
