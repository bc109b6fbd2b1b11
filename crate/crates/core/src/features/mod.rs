//! Classical image descriptors and feature fusion.

pub mod filter;
mod gradient;
mod hog;
mod integral;
pub mod sift;
pub mod surf;

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClassLabel, GrayImage};

pub use gradient::{orientation, sobel_gradients, GradientField};
pub use hog::{hog_extract, hog_len, HogConfig, HogDescriptor};
pub use integral::{integral_image, IntegralImage};
pub use sift::{
    dominant_orientation, sift_describe, sift_keypoints, SiftConfig, SiftDescriptor, SIFT_LEN,
};
pub use surf::{
    surf_describe, surf_detect_describe, surf_keypoints, SurfConfig, SurfDescriptor, SURF_LEN,
};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("image {width}x{height} is smaller than the required {min}x{min}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("CSV row has {got} values, expected {expected}")]
    RowLength { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub scale: f64,
    pub orientation: f64,
    pub response: f64,
}

/// Strongest |response| first; ties by (y, x) ascending.
pub fn sort_keypoints(kps: &mut [Keypoint]) {
    kps.sort_by(|a, b| {
        b.response
            .abs()
            .partial_cmp(&a.response.abs())
            .unwrap_or(Ordering::Equal)
            .then(a.y.partial_cmp(&b.y).unwrap_or(Ordering::Equal))
            .then(a.x.partial_cmp(&b.x).unwrap_or(Ordering::Equal))
    });
}

/// Zero-pad or truncate each part to its target length and concatenate.
pub fn concat_features(parts: &[&[f64]], targets: &[usize]) -> Vec<f64> {
    assert_eq!(parts.len(), targets.len(), "one target length per part");
    let mut out = Vec::with_capacity(targets.iter().sum());
    for (part, &target) in parts.iter().zip(targets) {
        let take = part.len().min(target);
        out.extend_from_slice(&part[..take]);
        out.resize(out.len() + target - take, 0.0);
    }
    out
}

/// Flatten per-keypoint descriptors into a fixed `slots × len` block.
pub fn keypoint_block(descriptors: &[Vec<f64>], slots: usize, len: usize) -> Vec<f64> {
    let flat: Vec<f64> = descriptors.iter().take(slots).flatten().copied().collect();
    concat_features(&[&flat], &[slots * len])
}

/// HOG block followed by the zero-padded 10×128 SIFT block.
pub fn hog_sift_vector(
    img: &GrayImage,
    hog: &HogConfig,
    sift: &SiftConfig,
) -> Result<Vec<f64>, FeatureError> {
    let h = hog_extract(img, hog)?;
    let kps = sift_keypoints(img, sift)?;
    let descs: Vec<Vec<f64>> = kps
        .iter()
        .map(|k| sift_describe(img, k, sift.sigma0).values)
        .collect();
    let block = keypoint_block(&descs, sift.max_keypoints, SIFT_LEN);
    Ok(concat_features(
        &[&h.values, &block],
        &[h.values.len(), block.len()],
    ))
}

/// Zero-padded `max_keypoints × 64` SURF block.
pub fn surf_vector(img: &GrayImage, cfg: &SurfConfig) -> Result<Vec<f64>, FeatureError> {
    let descs: Vec<Vec<f64>> = surf_detect_describe(img, cfg)?
        .into_iter()
        .map(|(_, d)| d.values)
        .collect();
    Ok(keypoint_block(&descs, cfg.max_keypoints, SURF_LEN))
}

/// One row per image: label, then the descriptor values. The header names the layout.
pub fn write_csv<W: Write>(
    out: &mut W,
    layout: &str,
    rows: &[(ClassLabel, Vec<f64>)],
) -> Result<(), FeatureError> {
    let width = rows.first().map_or(0, |r| r.1.len());
    write!(out, "label")?;
    for i in 0..width {
        write!(out, ",{layout}_{i}")?;
    }
    writeln!(out)?;
    for (label, values) in rows {
        if values.len() != width {
            return Err(FeatureError::RowLength {
                expected: width,
                got: values.len(),
            });
        }
        write!(out, "{}", label.id())?;
        for v in values {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn concat_exact_targets() {
        assert_eq!(
            concat_features(&[&[1.0, 2.0], &[3.0]], &[2, 1]),
            vec![1.0, 2.0, 3.0]
        );
    }

    #[test]
    fn seven_sift_descriptors_padded_to_ten() {
        let descs: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64 + 1.0; 128]).collect();
        let block = keypoint_block(&descs, 10, 128);
        assert_eq!(block.len(), 1280);
        assert!(block[7 * 128..].iter().all(|&v| v == 0.0));
        assert!(block[..7 * 128].iter().all(|&v| v > 0.0));
    }

    #[test]
    fn empty_part_with_zero_target() {
        assert_eq!(
            concat_features(&[&[], &[4.0, 5.0]], &[0, 2]),
            vec![4.0, 5.0]
        );
    }

    #[test]
    fn truncates_long_parts() {
        assert_eq!(concat_features(&[&[1.0, 2.0, 3.0]], &[2]), vec![1.0, 2.0]);
    }

    #[test]
    fn keypoint_sort_tie_break() {
        let kp = |x: f64, y: f64, r: f64| Keypoint {
            x,
            y,
            scale: 1.0,
            orientation: 0.0,
            response: r,
        };
        let mut v = vec![
            kp(5.0, 1.0, 2.0),
            kp(1.0, 1.0, -2.0),
            kp(0.0, 0.0, 1.0),
            kp(3.0, 0.0, 2.0),
        ];
        sort_keypoints(&mut v);
        let order: Vec<(f64, f64)> = v.iter().map(|k| (k.x, k.y)).collect();
        assert_eq!(order, vec![(3.0, 0.0), (1.0, 1.0), (5.0, 1.0), (0.0, 0.0)]);
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_csv(&mut buf, "hog", &[(ClassLabel::Engaged, vec![1.0, 0.5])]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "label,hog_0,hog_1\n2,1,0.5\n"
        );
    }

    #[test]
    fn fused_vector_lengths() {
        let img = GrayImage::from_fn(100, 100, |x, y| {
            ((x / 9 + y / 13) % 2) as f64 * 180.0 + 20.0
        });
        assert_eq!(
            hog_sift_vector(&img, &HogConfig::default(), &SiftConfig::default())
                .unwrap()
                .len(),
            1296 + 1280
        );
        assert_eq!(
            surf_vector(&img, &SurfConfig::default()).unwrap().len(),
            640
        );
    }

    proptest! {
        #[test]
        fn concat_length_is_sum_of_targets(lens in proptest::collection::vec(0usize..20, 0..5), targets in proptest::collection::vec(0usize..20, 5)) {
            let parts: Vec<Vec<f64>> = lens.iter().map(|&n| vec![1.0; n]).collect();
            let refs: Vec<&[f64]> = parts.iter().map(|p| p.as_slice()).collect();
            let t = &targets[..parts.len()];
            prop_assert_eq!(concat_features(&refs, t).len(), t.iter().sum::<usize>());
        }
    }
}
