//! Pyramidal Lucas–Kanade sparse optical flow.

use crate::raster::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LkConfig {
    pub levels: usize,
    /// Half-size of the tracking window (21x21 for 10).
    pub half_window: usize,
    pub max_iterations: usize,
    /// Stop when the update is shorter than this, pixels.
    pub epsilon: f32,
    /// Minimum eigenvalue of the normalized gradient matrix.
    pub min_eigenvalue: f32,
    /// Maximum mean absolute intensity residual of an accepted track.
    pub max_residual: f32,
}

impl Default for LkConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            half_window: 10,
            max_iterations: 30,
            epsilon: 1e-2,
            min_eigenvalue: 1e-3,
            max_residual: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowResult {
    pub x: f32,
    pub y: f32,
    pub tracked: bool,
}

struct Level {
    img: GrayImage,
    gx: GrayImage,
    gy: GrayImage,
}

fn central_gradients(img: &GrayImage) -> (GrayImage, GrayImage) {
    let (w, h) = (img.width(), img.height());
    let gx = GrayImage::from_fn(w, h, |x, y| {
        let l = img.get(x.saturating_sub(1), y);
        let r = img.get((x + 1).min(w - 1), y);
        0.5 * (r - l)
    });
    let gy = GrayImage::from_fn(w, h, |x, y| {
        let u = img.get(x, y.saturating_sub(1));
        let d = img.get(x, (y + 1).min(h - 1));
        0.5 * (d - u)
    });
    (gx, gy)
}

fn pyramid(img: &GrayImage, levels: usize) -> Vec<GrayImage> {
    let mut out = vec![img.clone()];
    for _ in 1..levels {
        let last = out.last().unwrap();
        if last.width() < 8 || last.height() < 8 {
            break;
        }
        out.push(last.half());
    }
    out
}

/// Tracks `pts` from `prev` into `cur`. Points whose final position leaves
/// the image, whose window is untextured, or whose solution diverges come
/// back with `tracked = false`.
pub fn track_flow(prev: &GrayImage, cur: &GrayImage, pts: &[(f32, f32)], cfg: &LkConfig) -> Vec<FlowResult> {
    assert_eq!(
        (prev.width(), prev.height()),
        (cur.width(), cur.height()),
        "flow images must share dimensions"
    );
    let prev_pyr: Vec<Level> = pyramid(prev, cfg.levels)
        .into_iter()
        .map(|img| {
            let (gx, gy) = central_gradients(&img);
            Level { img, gx, gy }
        })
        .collect();
    let cur_pyr = pyramid(cur, prev_pyr.len());
    pts.iter()
        .map(|&p| track_point(&prev_pyr, &cur_pyr, p, cfg))
        .collect()
}

fn track_point(prev: &[Level], cur: &[GrayImage], p: (f32, f32), cfg: &LkConfig) -> FlowResult {
    let (w, h) = (prev[0].img.width() as f32, prev[0].img.height() as f32);
    let fail = FlowResult {
        x: p.0,
        y: p.1,
        tracked: false,
    };
    if !(p.0 >= 0.0 && p.1 >= 0.0 && p.0 <= w - 1.0 && p.1 <= h - 1.0) {
        return fail;
    }
    let hw = cfg.half_window as i32;
    let n = ((2 * hw + 1) * (2 * hw + 1)) as f32;
    let mut guess = (0f32, 0f32);
    let mut last_residual = 0f32;

    for level in (0..prev.len()).rev() {
        let scale = (1u32 << level) as f32;
        let px = (p.0 + 0.5) / scale - 0.5;
        let py = (p.1 + 0.5) / scale - 0.5;
        let lv = &prev[level];
        let cimg = &cur[level];

        let mut tmpl = Vec::with_capacity(n as usize);
        let (mut gxx, mut gxy, mut gyy) = (0f32, 0f32, 0f32);
        for dy in -hw..=hw {
            for dx in -hw..=hw {
                let (sx, sy) = (px + dx as f32, py + dy as f32);
                let ix = lv.gx.sample(sx, sy);
                let iy = lv.gy.sample(sx, sy);
                tmpl.push((lv.img.sample(sx, sy), ix, iy));
                gxx += ix * ix;
                gxy += ix * iy;
                gyy += iy * iy;
            }
        }
        let det = gxx * gyy - gxy * gxy;
        let min_eig =
            (0.5 * (gxx + gyy) - ((0.5 * (gxx - gyy)).powi(2) + gxy * gxy).sqrt()) / n;
        if min_eig < cfg.min_eigenvalue || det.abs() < f32::EPSILON {
            return fail;
        }

        let mut nu = (0f32, 0f32);
        for _ in 0..cfg.max_iterations {
            let (mut bx, mut by) = (0f32, 0f32);
            let mut resid = 0f32;
            let mut k = 0;
            for dy in -hw..=hw {
                for dx in -hw..=hw {
                    let (t, ix, iy) = tmpl[k];
                    k += 1;
                    let j = cimg.sample(
                        px + guess.0 + nu.0 + dx as f32,
                        py + guess.1 + nu.1 + dy as f32,
                    );
                    let diff = t - j;
                    resid += diff.abs();
                    bx += diff * ix;
                    by += diff * iy;
                }
            }
            last_residual = resid / n;
            let ex = (gyy * bx - gxy * by) / det;
            let ey = (gxx * by - gxy * bx) / det;
            if !(ex.is_finite() && ey.is_finite()) {
                return fail;
            }
            nu.0 += ex;
            nu.1 += ey;
            if ex * ex + ey * ey < cfg.epsilon * cfg.epsilon {
                break;
            }
        }
        guess = if level > 0 {
            (2.0 * (guess.0 + nu.0), 2.0 * (guess.1 + nu.1))
        } else {
            (guess.0 + nu.0, guess.1 + nu.1)
        };
    }

    let (x, y) = (p.0 + guess.0, p.1 + guess.1);
    let inside = x >= 0.0 && y >= 0.0 && x <= w - 1.0 && y <= h - 1.0;
    FlowResult {
        x,
        y,
        tracked: inside && x.is_finite() && y.is_finite() && last_residual <= cfg.max_residual,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(x: f32, y: f32) -> f32 {
        128.0
            + 50.0 * (0.31 * x).sin() * (0.23 * y).cos()
            + 30.0 * (0.11 * x + 0.17 * y).sin()
            + 20.0 * (0.07 * x - 0.29 * y).cos()
    }

    fn image(shift: f32) -> GrayImage {
        GrayImage::from_fn(120, 100, |x, y| texture(x as f32 - shift, y as f32))
    }

    #[test]
    fn zero_motion_maps_to_self() {
        let img = image(0.0);
        let pts = [(30.0, 40.0), (60.5, 50.25), (90.0, 20.0)];
        for (r, p) in track_flow(&img, &img, &pts, &LkConfig::default()).iter().zip(pts) {
            assert!(r.tracked);
            assert!((r.x - p.0).abs() < 1e-2 && (r.y - p.1).abs() < 1e-2);
        }
    }

    #[test]
    fn recovers_horizontal_shift() {
        let pts = [(40.0, 40.0), (70.0, 55.0), (55.0, 30.0)];
        let res = track_flow(&image(0.0), &image(2.0), &pts, &LkConfig::default());
        for (r, p) in res.iter().zip(pts) {
            assert!(r.tracked);
            assert!((r.x - p.0 - 2.0).abs() < 0.1, "{r:?}");
            assert!((r.y - p.1).abs() < 0.1, "{r:?}");
        }
    }

    #[test]
    fn leaving_the_image_fails() {
        let res = track_flow(&image(0.0), &image(6.0), &[(118.0, 50.0)], &LkConfig::default());
        assert!(!res[0].tracked);
    }
}
