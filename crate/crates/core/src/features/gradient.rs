use std::f64::consts::PI;

use super::FeatureError;
use crate::dataset::GrayImage;

/// Per-pixel Sobel derivatives with magnitude and orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    pub mag: Vec<f64>,
    /// Radians in (−π, π].
    pub phi: Vec<f64>,
}

impl GradientField {
    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }
}

/// Three-branch arctangent: the `dy/dx` arctangent shifted by ±π when `dx < 0`.
/// A vertical gradient (`dx = 0`) maps to ±π/2 and a zero gradient to 0.
pub fn orientation(dx: f64, dy: f64) -> f64 {
    if dx == 0.0 {
        return if dy > 0.0 {
            PI / 2.0
        } else if dy < 0.0 {
            -PI / 2.0
        } else {
            0.0
        };
    }
    let base = (dy / dx).atan();
    if dx < 0.0 && dy < 0.0 {
        base - PI
    } else if dx < 0.0 && dy > 0.0 {
        base + PI
    } else {
        base
    }
}

/// 3×3 Sobel with edge replication.
pub fn sobel_gradients(img: &GrayImage) -> Result<GradientField, FeatureError> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(FeatureError::ImageTooSmall {
            width: w,
            height: h,
            min: 3,
        });
    }
    let n = w * h;
    let mut dx = vec![0.0; n];
    let mut dy = vec![0.0; n];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |ox: isize, oy: isize| img.get_clamped(x + ox, y + oy);
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let i = y as usize * w + x as usize;
            dx[i] = gx;
            dy[i] = gy;
        }
    }
    let mag = dx.iter().zip(&dy).map(|(a, b)| a.hypot(*b)).collect();
    let phi = dx
        .iter()
        .zip(&dy)
        .map(|(&a, &b)| orientation(a, b))
        .collect();
    Ok(GradientField {
        width: w,
        height: h,
        dx,
        dy,
        mag,
        phi,
    })
}
