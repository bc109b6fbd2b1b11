use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{sobel_gradients, FeatureError};
use crate::dataset::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HogConfig {
    pub cell_px: usize,
    pub bins: usize,
    /// Gaussian weight σ applied inside each cell; `None` means half the cell width.
    pub sigma: Option<f64>,
}

impl Default for HogConfig {
    fn default() -> Self {
        Self {
            cell_px: 8,
            bins: 9,
            sigma: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HogDescriptor {
    pub values: Vec<f64>,
    pub cells_y: usize,
    pub cells_x: usize,
    pub bins: usize,
}

impl HogDescriptor {
    pub fn cell(&self, cy: usize, cx: usize) -> &[f64] {
        let start = (cy * self.cells_x + cx) * self.bins;
        &self.values[start..start + self.bins]
    }
}

/// Number of HOG values produced for an image of the given size.
pub fn hog_len(width: usize, height: usize, cfg: &HogConfig) -> usize {
    (height / cfg.cell_px) * (width / cfg.cell_px) * cfg.bins
}

/// Per-cell unsigned-orientation histograms, concatenated row-major.
///
/// Each pixel votes its Gaussian-weighted gradient magnitude into the two
/// nearest of `bins` orientation bins over [0, π). No block normalisation.
pub fn hog_extract(img: &GrayImage, cfg: &HogConfig) -> Result<HogDescriptor, FeatureError> {
    let cell = cfg.cell_px;
    if cell == 0 || cfg.bins == 0 {
        return Err(FeatureError::InvalidConfig(
            "cell size and bin count must be positive".into(),
        ));
    }
    let min = cell.max(3);
    if img.width() < min || img.height() < min {
        return Err(FeatureError::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            min,
        });
    }
    let grad = sobel_gradients(img)?;
    let cells_y = img.height() / cell;
    let cells_x = img.width() / cell;
    let bins = cfg.bins;
    let bin_width = PI / bins as f64;
    let sigma = cfg.sigma.unwrap_or(cell as f64 / 2.0);
    let centre = (cell as f64 - 1.0) / 2.0;
    let weights: Vec<f64> = (0..cell * cell)
        .map(|i| {
            let (u, v) = ((i % cell) as f64 - centre, (i / cell) as f64 - centre);
            (-(u * u + v * v) / (2.0 * sigma * sigma)).exp()
        })
        .collect();

    let mut values = vec![0.0; cells_y * cells_x * bins];
    for cy in 0..cells_y {
        for cx in 0..cells_x {
            let hist = &mut values[(cy * cells_x + cx) * bins..][..bins];
            for v in 0..cell {
                for u in 0..cell {
                    let i = grad.index(cx * cell + u, cy * cell + v);
                    let m = grad.mag[i];
                    if m == 0.0 {
                        continue;
                    }
                    let mut theta = grad.phi[i].rem_euclid(PI);
                    if theta >= PI {
                        theta -= PI;
                    }
                    let t = theta / bin_width - 0.5;
                    let lo = t.floor();
                    let frac = t - lo;
                    let b0 = (lo as isize).rem_euclid(bins as isize) as usize;
                    let b1 = (b0 + 1) % bins;
                    let w = m * weights[v * cell + u];
                    hist[b0] += w * (1.0 - frac);
                    hist[b1] += w * frac;
                }
            }
        }
    }
    Ok(HogDescriptor {
        values,
        cells_y,
        cells_x,
        bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            (((x * 7 + y * 13) % 29) as f64 * 5.0 + (x as f64 * 0.3).sin() * 20.0).abs()
        })
    }

    #[test]
    fn descriptor_lengths() {
        let cfg = HogConfig::default();
        assert_eq!(
            hog_extract(&textured(64, 64), &cfg).unwrap().values.len(),
            576
        );
        assert_eq!(
            hog_extract(&textured(100, 100), &cfg).unwrap().values.len(),
            1296
        );
        let d = hog_extract(&textured(37, 21), &cfg).unwrap();
        assert_eq!((d.cells_y, d.cells_x), (2, 4));
        assert_eq!(d.values.len(), hog_len(37, 21, &cfg));
    }

    #[test]
    fn constant_image_gives_zeros() {
        let d = hog_extract(
            &GrayImage::from_fn(32, 32, |_, _| 77.0),
            &HogConfig::default(),
        )
        .unwrap();
        assert!(d.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scaling_intensity_scales_descriptor() {
        let img = textured(48, 40);
        let cfg = HogConfig::default();
        let a = hog_extract(&img, &cfg).unwrap();
        let b = hog_extract(&img.map(|v| v * 3.5), &cfg).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((3.5 * x - y).abs() <= 1e-9 * y.abs().max(1.0));
        }
    }

    #[test]
    fn vertical_edge_votes_horizontal_bins() {
        // dark left half, bright right half: gradients point along +x (θ = 0)
        let img = GrayImage::from_fn(16, 8, |x, _| if x < 8 { 0.0 } else { 100.0 });
        let d = hog_extract(&img, &HogConfig::default()).unwrap();
        let h = d.cell(0, 0);
        // θ = 0 splits evenly between the first and last bin
        assert!((h[0] - h[8]).abs() < 1e-9);
        assert!(h[0] > 0.0);
        assert!(h[1..8].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn entries_non_negative() {
        let d = hog_extract(&textured(100, 100), &HogConfig::default()).unwrap();
        assert!(d.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn too_small() {
        assert!(hog_extract(&textured(7, 30), &HogConfig::default()).is_err());
    }
}
