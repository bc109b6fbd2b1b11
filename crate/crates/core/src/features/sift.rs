//! Difference-of-Gaussians keypoints with 128-value gradient-histogram descriptors.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::filter::{downsample, gaussian_blur};
use super::{sort_keypoints, FeatureError, Keypoint};
use crate::dataset::GrayImage;

pub const SIFT_LEN: usize = 128;
const ORI_BINS: usize = 36;
const DESC_WIDTH: usize = 4;
const DESC_BINS: usize = 8;
const DESC_SAMPLES: usize = 16;
const CLIP: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiftConfig {
    pub octaves: usize,
    pub scales_per_octave: usize,
    pub sigma0: f64,
    /// Minimum |DoG| at the refined extremum, on intensities scaled to [0, 1].
    pub contrast_threshold: f64,
    /// Principal-curvature ratio limit; `None` disables edge rejection.
    pub edge_ratio: Option<f64>,
    /// Blur already present in the input image.
    pub assumed_blur: f64,
    pub max_keypoints: usize,
}

impl Default for SiftConfig {
    fn default() -> Self {
        Self {
            octaves: 3,
            scales_per_octave: 3,
            sigma0: 1.6,
            contrast_threshold: 0.03,
            edge_ratio: Some(10.0),
            assumed_blur: 0.5,
            max_keypoints: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiftDescriptor {
    pub values: Vec<f64>,
}

struct Octave {
    gauss: Vec<GrayImage>,
    dog: Vec<Vec<f64>>,
    width: usize,
    height: usize,
}

impl Octave {
    #[inline]
    fn d(&self, s: usize, x: usize, y: usize) -> f64 {
        self.dog[s][y * self.width + x]
    }
}

fn build_pyramid(img: &GrayImage, cfg: &SiftConfig) -> Vec<Octave> {
    let s = cfg.scales_per_octave;
    let k = 2f64.powf(1.0 / s as f64);
    let scaled = img.map(|v| v / 255.0);
    let initial = (cfg.sigma0 * cfg.sigma0 - cfg.assumed_blur * cfg.assumed_blur)
        .max(0.0)
        .sqrt();
    let mut base = gaussian_blur(&scaled, initial);
    let mut octaves = Vec::new();
    for o in 0..cfg.octaves {
        if base.width() < 8 || base.height() < 8 {
            break;
        }
        let mut gauss = vec![base.clone()];
        for i in 1..s + 3 {
            let prev = cfg.sigma0 * k.powi(i as i32 - 1);
            let next = prev * k;
            let inc = (next * next - prev * prev).sqrt();
            let g = gaussian_blur(&gauss[i - 1], inc);
            gauss.push(g);
        }
        let dog = gauss
            .windows(2)
            .map(|p| {
                p[1].pixels()
                    .iter()
                    .zip(p[0].pixels())
                    .map(|(a, b)| a - b)
                    .collect()
            })
            .collect();
        let (width, height) = (base.width(), base.height());
        if o + 1 < cfg.octaves {
            base = downsample(&gauss[s]);
        }
        octaves.push(Octave {
            gauss,
            dog,
            width,
            height,
        });
    }
    octaves
}

fn is_extremum(oct: &Octave, s: usize, x: usize, y: usize) -> bool {
    let v = oct.d(s, x, y);
    let (mut is_max, mut is_min) = (true, true);
    for ds in 0..3 {
        for dy in 0..3 {
            for dx in 0..3 {
                if ds == 1 && dy == 1 && dx == 1 {
                    continue;
                }
                let n = oct.d(s + ds - 1, x + dx - 1, y + dy - 1);
                is_max &= v >= n;
                is_min &= v <= n;
                if !is_max && !is_min {
                    return false;
                }
            }
        }
    }
    // a flat neighbourhood is both and neither
    is_max != is_min
}

fn solve3(h: [[f64; 3]; 3], g: [f64; 3]) -> Option<[f64; 3]> {
    let det = h[0][0] * (h[1][1] * h[2][2] - h[1][2] * h[2][1])
        - h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0])
        + h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0]);
    if det.abs() < 1e-15 {
        return None;
    }
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut m = h;
        for r in 0..3 {
            m[r][c] = g[r];
        }
        let d = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        *o = d / det;
    }
    Some(out)
}

struct Refined {
    x: f64,
    y: f64,
    s: f64,
    value: f64,
    xi: usize,
    yi: usize,
    si: usize,
}

/// Quadratic refinement in (x, y, scale); falls back to the integer sample
/// when the offset does not settle within five steps.
fn refine(oct: &Octave, s: usize, x: usize, y: usize, cfg: &SiftConfig) -> Option<Refined> {
    let (mut si, mut xi, mut yi) = (s, x, y);
    for _ in 0..5 {
        let d = |ds: isize, dx: isize, dy: isize| {
            oct.d(
                (si as isize + ds) as usize,
                (xi as isize + dx) as usize,
                (yi as isize + dy) as usize,
            )
        };
        let v = d(0, 0, 0);
        let g = [
            (d(0, 1, 0) - d(0, -1, 0)) / 2.0,
            (d(0, 0, 1) - d(0, 0, -1)) / 2.0,
            (d(1, 0, 0) - d(-1, 0, 0)) / 2.0,
        ];
        let dxx = d(0, 1, 0) + d(0, -1, 0) - 2.0 * v;
        let dyy = d(0, 0, 1) + d(0, 0, -1) - 2.0 * v;
        let dss = d(1, 0, 0) + d(-1, 0, 0) - 2.0 * v;
        let dxy = (d(0, 1, 1) - d(0, -1, 1) - d(0, 1, -1) + d(0, -1, -1)) / 4.0;
        let dxs = (d(1, 1, 0) - d(1, -1, 0) - d(-1, 1, 0) + d(-1, -1, 0)) / 4.0;
        let dys = (d(1, 0, 1) - d(1, 0, -1) - d(-1, 0, 1) + d(-1, 0, -1)) / 4.0;
        let hess = [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]];

        if let Some(edge) = cfg.edge_ratio {
            let tr = dxx + dyy;
            let det = dxx * dyy - dxy * dxy;
            if det <= 0.0 || tr * tr * edge >= (edge + 1.0) * (edge + 1.0) * det {
                return None;
            }
        }
        let off = solve3(hess, g)
            .map(|o| [-o[0], -o[1], -o[2]])
            .unwrap_or([0.0; 3]);
        if off.iter().all(|o| o.abs() <= 0.5) {
            let value = v + 0.5 * (g[0] * off[0] + g[1] * off[1] + g[2] * off[2]);
            return Some(Refined {
                x: xi as f64 + off[0],
                y: yi as f64 + off[1],
                s: si as f64 + off[2],
                value,
                xi,
                yi,
                si,
            });
        }
        let step = |p: usize, o: f64, lo: usize, hi: usize| -> Option<usize> {
            let n = p as isize + o.round() as isize;
            (n >= lo as isize && n <= hi as isize).then_some(n as usize)
        };
        xi = step(xi, off[0], 1, oct.width - 2)?;
        yi = step(yi, off[1], 1, oct.height - 2)?;
        si = step(si, off[2], 1, cfg.scales_per_octave)?;
    }
    let v = oct.d(s, x, y);
    Some(Refined {
        x: x as f64,
        y: y as f64,
        s: s as f64,
        value: v,
        xi: x,
        yi: y,
        si: s,
    })
}

/// Dominant gradient direction around `(x, y)` from a 36-bin histogram
/// weighted by a Gaussian of `window_sigma` pixels.
pub fn dominant_orientation(img: &GrayImage, x: f64, y: f64, window_sigma: f64) -> f64 {
    let radius = (3.0 * window_sigma).round().max(1.0) as isize;
    let (cx, cy) = (x.round() as isize, y.round() as isize);
    let mut hist = [0.0f64; ORI_BINS];
    for v in -radius..=radius {
        for u in -radius..=radius {
            if u * u + v * v > radius * radius {
                continue;
            }
            let (px, py) = (cx + u, cy + v);
            let gx = img.get_clamped(px + 1, py) - img.get_clamped(px - 1, py);
            let gy = img.get_clamped(px, py + 1) - img.get_clamped(px, py - 1);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let w = (-((u * u + v * v) as f64) / (2.0 * window_sigma * window_sigma)).exp();
            let angle = gy.atan2(gx).rem_euclid(2.0 * PI);
            let bin = ((angle / (2.0 * PI) * ORI_BINS as f64).floor() as usize) % ORI_BINS;
            hist[bin] += w * mag;
        }
    }
    // [1 4 6 4 1] circular smoothing
    let smoothed: Vec<f64> = (0..ORI_BINS)
        .map(|i| {
            let at = |o: isize| hist[(i as isize + o).rem_euclid(ORI_BINS as isize) as usize];
            (at(-2) + 4.0 * at(-1) + 6.0 * at(0) + 4.0 * at(1) + at(2)) / 16.0
        })
        .collect();
    let (best, &peak) =
        smoothed.iter().enumerate().fold(
            (0, &f64::MIN),
            |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc },
        );
    if peak <= 0.0 {
        return 0.0;
    }
    let left = smoothed[(best + ORI_BINS - 1) % ORI_BINS];
    let right = smoothed[(best + 1) % ORI_BINS];
    let denom = left - 2.0 * peak + right;
    let shift = if denom.abs() > 1e-15 {
        0.5 * (left - right) / denom
    } else {
        0.0
    };
    let angle = (best as f64 + 0.5 + shift) * 2.0 * PI / ORI_BINS as f64;
    let angle = angle.rem_euclid(2.0 * PI);
    if angle > PI {
        angle - 2.0 * PI
    } else {
        angle
    }
}

/// Detect up to `cfg.max_keypoints` scale-space extrema, strongest first.
pub fn sift_keypoints(img: &GrayImage, cfg: &SiftConfig) -> Result<Vec<Keypoint>, FeatureError> {
    if img.width() < 32 || img.height() < 32 {
        return Err(FeatureError::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            min: 32,
        });
    }
    let s_count = cfg.scales_per_octave;
    let prefilter = 0.5 * cfg.contrast_threshold;
    let mut out = Vec::new();
    for (o, oct) in build_pyramid(img, cfg).iter().enumerate() {
        let factor = 2f64.powi(o as i32);
        for s in 1..=s_count {
            for y in 1..oct.height - 1 {
                for x in 1..oct.width - 1 {
                    if oct.d(s, x, y).abs() < prefilter || !is_extremum(oct, s, x, y) {
                        continue;
                    }
                    let Some(r) = refine(oct, s, x, y, cfg) else {
                        continue;
                    };
                    if r.value.abs() < cfg.contrast_threshold {
                        continue;
                    }
                    let octave_sigma = cfg.sigma0 * 2f64.powf(r.s / s_count as f64);
                    let orientation = dominant_orientation(
                        &oct.gauss[r.si],
                        r.xi as f64,
                        r.yi as f64,
                        1.5 * octave_sigma,
                    );
                    let kx = (r.x * factor).clamp(0.0, (img.width() - 1) as f64);
                    let ky = (r.y * factor).clamp(0.0, (img.height() - 1) as f64);
                    out.push(Keypoint {
                        x: kx,
                        y: ky,
                        scale: octave_sigma * factor,
                        orientation,
                        response: r.value,
                    });
                }
            }
        }
    }
    sort_keypoints(&mut out);
    out.truncate(cfg.max_keypoints);
    Ok(out)
}

/// 4×4 sub-blocks × 8 orientation bins over a 16×16 sample grid rotated to the
/// keypoint orientation, with sample spacing `scale / sigma0` pixels.
pub fn sift_describe(img: &GrayImage, kp: &Keypoint, sigma0: f64) -> SiftDescriptor {
    let spacing = (kp.scale / sigma0).max(1e-6);
    let smoothing = 0.5 * spacing;
    let blurred;
    let src = if smoothing > 0.5 {
        blurred = gaussian_blur(img, (smoothing * smoothing - 0.25).sqrt());
        &blurred
    } else {
        img
    };
    let (sin, cos) = kp.orientation.sin_cos();
    let half = (DESC_SAMPLES as f64 - 1.0) / 2.0;
    let weight_sigma = DESC_SAMPLES as f64 / 2.0;
    let mut values = vec![0.0; SIFT_LEN];
    for v in 0..DESC_SAMPLES {
        for u in 0..DESC_SAMPLES {
            let a = (u as f64 - half) * spacing;
            let b = (v as f64 - half) * spacing;
            let px = kp.x + a * cos - b * sin;
            let py = kp.y + a * sin + b * cos;
            // derivatives along the keypoint's own axes
            let (e1x, e1y) = (cos * spacing, sin * spacing);
            let (e2x, e2y) = (-sin * spacing, cos * spacing);
            let g1 =
                src.sample_bilinear(px + e1x, py + e1y) - src.sample_bilinear(px - e1x, py - e1y);
            let g2 =
                src.sample_bilinear(px + e2x, py + e2y) - src.sample_bilinear(px - e2x, py - e2y);
            let mag = g1.hypot(g2);
            if mag == 0.0 {
                continue;
            }
            let (du, dv) = (u as f64 - half, v as f64 - half);
            let w = (-(du * du + dv * dv) / (2.0 * weight_sigma * weight_sigma)).exp();
            let angle = g2.atan2(g1).rem_euclid(2.0 * PI);
            let t = angle / (2.0 * PI) * DESC_BINS as f64;
            let lo = t.floor();
            let frac = t - lo;
            let b0 = (lo as usize) % DESC_BINS;
            let b1 = (b0 + 1) % DESC_BINS;
            let cell = (v / DESC_WIDTH) * DESC_WIDTH + u / DESC_WIDTH;
            values[cell * DESC_BINS + b0] += w * mag * (1.0 - frac);
            values[cell * DESC_BINS + b1] += w * mag * frac;
        }
    }
    normalize_clip(&mut values);
    SiftDescriptor { values }
}

fn normalize_clip(values: &mut [f64]) {
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return;
    }
    values.iter_mut().for_each(|v| *v = (*v / norm).min(CLIP));
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    values.iter_mut().for_each(|v| *v /= norm);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(side: usize, cx: f64, cy: f64, sigma: f64) -> GrayImage {
        GrayImage::from_fn(side, side, |x, y| {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            30.0 + 200.0 * (-d2 / (2.0 * sigma * sigma)).exp()
        })
    }

    fn rotate90(img: &GrayImage) -> GrayImage {
        let n = img.width();
        GrayImage::from_fn(n, n, |x, y| img.get(y, n - 1 - x))
    }

    #[test]
    fn constant_image_has_no_keypoints() {
        let kps = sift_keypoints(
            &GrayImage::from_fn(48, 48, |_, _| 128.0),
            &SiftConfig::default(),
        )
        .unwrap();
        assert!(kps.is_empty());
    }

    #[test]
    fn single_blob_is_found_at_its_centre() {
        let img = blob(64, 31.0, 33.0, 4.0);
        let kps = sift_keypoints(&img, &SiftConfig::default()).unwrap();
        assert!(!kps.is_empty());
        let top = &kps[0];
        assert!(
            (top.x - 31.0).hypot(top.y - 33.0) <= 2.0,
            "top keypoint at ({}, {})",
            top.x,
            top.y
        );
    }

    #[test]
    fn checkerboard_is_capped_at_ten() {
        let img = GrayImage::from_fn(96, 96, |x, y| {
            if (x / 8 + y / 8) % 2 == 0 {
                40.0
            } else {
                210.0
            }
        });
        let kps = sift_keypoints(&img, &SiftConfig::default()).unwrap();
        assert_eq!(kps.len(), 10);
        for w in kps.windows(2) {
            assert!(w[0].response.abs() >= w[1].response.abs());
        }
        for kp in &kps {
            assert!(kp.scale > 0.0);
            assert!(kp.x >= 0.0 && kp.x < 96.0 && kp.y >= 0.0 && kp.y < 96.0);
        }
    }

    #[test]
    fn descriptor_is_unit_length() {
        let img = GrayImage::from_fn(40, 40, |x, y| ((x * x + 3 * y) % 17) as f64 * 9.0);
        let kp = Keypoint {
            x: 20.0,
            y: 19.0,
            scale: 2.4,
            orientation: 0.7,
            response: 1.0,
        };
        let d = sift_describe(&img, &kp, 1.6);
        assert_eq!(d.values.len(), 128);
        let norm: f64 = d.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        assert!(d.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn flat_patch_descriptor_is_zero() {
        let img = GrayImage::from_fn(40, 40, |_, _| 9.0);
        let kp = Keypoint {
            x: 20.0,
            y: 20.0,
            scale: 1.6,
            orientation: 0.0,
            response: 0.0,
        };
        assert!(sift_describe(&img, &kp, 1.6)
            .values
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn rotated_patch_matches() {
        // asymmetric content around the centre pixel of an odd-sized patch
        let img = GrayImage::from_fn(33, 33, |x, y| {
            let (u, v) = (x as f64 - 16.0, y as f64 - 16.0);
            let bar = if u > 2.0 && v.abs() < 3.0 { 150.0 } else { 0.0 };
            let spot = 90.0 * (-((u + 4.0).powi(2) + (v - 5.0).powi(2)) / 8.0).exp();
            40.0 + bar + spot + 0.5 * u
        });
        let rot = rotate90(&img);
        let scale = 1.6;
        let describe = |im: &GrayImage| {
            let ori = dominant_orientation(im, 16.0, 16.0, 1.5 * scale);
            let kp = Keypoint {
                x: 16.0,
                y: 16.0,
                scale,
                orientation: ori,
                response: 1.0,
            };
            (ori, sift_describe(im, &kp, 1.6))
        };
        let (o1, d1) = describe(&img);
        let (o2, d2) = describe(&rot);
        let turn = (o2 - o1).rem_euclid(2.0 * PI);
        assert!(
            (turn - PI / 2.0).abs() < 1e-6 || (turn - 1.5 * PI).abs() < 1e-6,
            "orientation change {turn}"
        );
        let dist: f64 = d1
            .values
            .iter()
            .zip(&d2.values)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(dist <= 0.15, "descriptor distance {dist}");
    }
}
