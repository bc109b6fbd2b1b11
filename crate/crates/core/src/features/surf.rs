//! Determinant-of-Hessian keypoints from box filters and Haar-wavelet descriptors.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{sort_keypoints, FeatureError, IntegralImage, Keypoint};
use crate::dataset::GrayImage;

pub const SURF_LEN: usize = 64;
const DXY_WEIGHT: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfConfig {
    pub filter_sizes: Vec<usize>,
    /// Minimum determinant response on intensities scaled to [0, 1].
    pub threshold: f64,
    pub max_keypoints: usize,
}

impl Default for SurfConfig {
    fn default() -> Self {
        Self {
            filter_sizes: vec![9, 15, 21, 27],
            threshold: 4e-4,
            max_keypoints: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfDescriptor {
    pub values: Vec<f64>,
}

/// Box-filter second derivatives at `(x, y)` for filter side `size`,
/// normalised by the filter area.
pub fn hessian_terms(ii: &IntegralImage, x: isize, y: isize, size: usize) -> (f64, f64, f64) {
    let l = (size / 3) as isize;
    let b = ((size - 1) / 2) as isize;
    let w = size as isize;
    let area = (size * size) as f64;
    // box(row, col, rows, cols)
    let bx = |r: isize, c: isize, rows: isize, cols: isize| ii.box_sum(c, r, c + cols, r + rows);
    let dxx = bx(y - l + 1, x - b, 2 * l - 1, w) - 3.0 * bx(y - l + 1, x - l / 2, 2 * l - 1, l);
    let dyy = bx(y - b, x - l + 1, w, 2 * l - 1) - 3.0 * bx(y - l / 2, x - l + 1, l, 2 * l - 1);
    let dxy = bx(y - l, x + 1, l, l) + bx(y + 1, x - l, l, l)
        - bx(y - l, x - l, l, l)
        - bx(y + 1, x + 1, l, l);
    (dxx / area, dyy / area, dxy / area)
}

pub fn hessian_response(ii: &IntegralImage, x: isize, y: isize, size: usize) -> f64 {
    let (dxx, dyy, dxy) = hessian_terms(ii, x, y, size);
    dxx * dyy - (DXY_WEIGHT * dxy).powi(2)
}

/// Filter size to Gaussian-equivalent scale.
pub fn filter_scale(size: usize) -> f64 {
    1.2 * size as f64 / 9.0
}

fn scaled(img: &GrayImage) -> GrayImage {
    img.map(|v| v / 255.0)
}

/// Local maxima of the Hessian determinant over space and the filter ladder.
pub fn surf_keypoints(img: &GrayImage, cfg: &SurfConfig) -> Result<Vec<Keypoint>, FeatureError> {
    if img.width() < 32 || img.height() < 32 {
        return Err(FeatureError::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            min: 32,
        });
    }
    let ii = IntegralImage::new(&scaled(img));
    let (w, h) = (img.width(), img.height());
    let sizes = &cfg.filter_sizes;
    let responses: Vec<Vec<f64>> = sizes
        .iter()
        .map(|&size| {
            let margin = size / 2 + 1;
            let mut r = vec![0.0; w * h];
            for y in margin..h.saturating_sub(margin) {
                for x in margin..w.saturating_sub(margin) {
                    r[y * w + x] = hessian_response(&ii, x as isize, y as isize, size);
                }
            }
            r
        })
        .collect();

    let mut out = Vec::new();
    for si in 1..sizes.len().saturating_sub(1) {
        let margin = sizes[si + 1] / 2 + 2;
        let scale = filter_scale(sizes[si]);
        for y in margin..h.saturating_sub(margin) {
            for x in margin..w.saturating_sub(margin) {
                let v = responses[si][y * w + x];
                if v < cfg.threshold {
                    continue;
                }
                let mut is_max = true;
                'scan: for layer in &responses[si - 1..=si + 1] {
                    for ny in y - 1..=y + 1 {
                        for nx in x - 1..=x + 1 {
                            if std::ptr::eq(layer, &responses[si]) && nx == x && ny == y {
                                continue;
                            }
                            if layer[ny * w + nx] > v {
                                is_max = false;
                                break 'scan;
                            }
                        }
                    }
                }
                if is_max {
                    out.push(Keypoint {
                        x: x as f64,
                        y: y as f64,
                        scale,
                        orientation: 0.0,
                        response: v,
                    });
                }
            }
        }
    }
    sort_keypoints(&mut out);
    out.truncate(cfg.max_keypoints);
    let pad = pad_for(out.iter().map(|k| k.scale).fold(0.0, f64::max));
    let padded = IntegralImage::padded(&scaled(img), pad);
    for kp in &mut out {
        kp.orientation = surf_orientation(&padded, kp);
    }
    Ok(out)
}

fn pad_for(scale: f64) -> usize {
    (15.0 * scale).ceil() as usize + 4
}

fn haar_x(ii: &IntegralImage, x: isize, y: isize, size: isize) -> f64 {
    let h = size / 2;
    ii.box_sum(x, y - h, x + h, y + h) - ii.box_sum(x - h, y - h, x, y + h)
}

fn haar_y(ii: &IntegralImage, x: isize, y: isize, size: isize) -> f64 {
    let h = size / 2;
    ii.box_sum(x - h, y, x + h, y + h) - ii.box_sum(x - h, y - h, x + h, y)
}

fn wavelet_size(scale: f64, factor: f64) -> isize {
    (((factor * scale).round() as isize) / 2 * 2).max(2)
}

/// Sliding π/3 sector over Gaussian-weighted Haar responses within radius 6·scale.
fn surf_orientation(ii: &IntegralImage, kp: &Keypoint) -> f64 {
    let s = kp.scale;
    let size = wavelet_size(s, 4.0);
    let mut samples = Vec::new();
    for j in -6isize..=6 {
        for i in -6isize..=6 {
            if i * i + j * j >= 36 {
                continue;
            }
            let x = (kp.x + i as f64 * s).round() as isize;
            let y = (kp.y + j as f64 * s).round() as isize;
            let g = (-((i * i + j * j) as f64) / (2.0 * 2.0 * 2.0)).exp();
            let rx = g * haar_x(ii, x, y, size);
            let ry = g * haar_y(ii, x, y, size);
            if rx != 0.0 || ry != 0.0 {
                samples.push((ry.atan2(rx).rem_euclid(2.0 * PI), rx, ry));
            }
        }
    }
    let mut best = (0.0, 0.0);
    let mut best_len = -1.0;
    let steps = 72;
    for k in 0..steps {
        let start = k as f64 * 2.0 * PI / steps as f64;
        let (mut sx, mut sy) = (0.0, 0.0);
        for &(a, rx, ry) in &samples {
            let d = (a - start).rem_euclid(2.0 * PI);
            if d < PI / 3.0 {
                sx += rx;
                sy += ry;
            }
        }
        let len = sx * sx + sy * sy;
        if len > best_len {
            best_len = len;
            best = (sx, sy);
        }
    }
    if best_len <= 0.0 {
        0.0
    } else {
        best.1.atan2(best.0)
    }
}

/// 4×4 subregions of 5×5 samples spanning 20·scale, each contributing
/// (Σdx, Σ|dx|, Σdy, Σ|dy|) in the keypoint frame; L2-normalised.
pub fn surf_describe(img: &GrayImage, kp: &Keypoint) -> SurfDescriptor {
    let ii = IntegralImage::padded(&scaled(img), pad_for(kp.scale));
    surf_describe_with(&ii, kp)
}

fn surf_describe_with(ii: &IntegralImage, kp: &Keypoint) -> SurfDescriptor {
    let s = kp.scale;
    let size = wavelet_size(s, 2.0);
    let (sin, cos) = kp.orientation.sin_cos();
    let mut values = vec![0.0; SURF_LEN];
    for v in 0..20 {
        for u in 0..20 {
            let a = (u as f64 - 9.5) * s;
            let b = (v as f64 - 9.5) * s;
            let x = (kp.x + a * cos - b * sin).round() as isize;
            let y = (kp.y + a * sin + b * cos).round() as isize;
            let rx = haar_x(ii, x, y, size);
            let ry = haar_y(ii, x, y, size);
            let g =
                (-((u as f64 - 9.5).powi(2) + (v as f64 - 9.5).powi(2)) / (2.0 * 3.3 * 3.3)).exp();
            let dx = g * (rx * cos + ry * sin);
            let dy = g * (-rx * sin + ry * cos);
            let cell = (v / 5) * 4 + u / 5;
            let out = &mut values[cell * 4..cell * 4 + 4];
            out[0] += dx;
            out[1] += dx.abs();
            out[2] += dy;
            out[3] += dy.abs();
        }
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        values.iter_mut().for_each(|v| *v /= norm);
    }
    SurfDescriptor { values }
}

/// Keypoints plus descriptors with a single padded integral image.
pub fn surf_detect_describe(
    img: &GrayImage,
    cfg: &SurfConfig,
) -> Result<Vec<(Keypoint, SurfDescriptor)>, FeatureError> {
    let kps = surf_keypoints(img, cfg)?;
    let pad = pad_for(kps.iter().map(|k| k.scale).fold(0.0, f64::max));
    let ii = IntegralImage::padded(&scaled(img), pad);
    Ok(kps
        .into_iter()
        .map(|k| {
            let d = surf_describe_with(&ii, &k);
            (k, d)
        })
        .collect())
}
