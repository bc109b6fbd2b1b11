//! Deterministic synthetic corpus in the dataset layout.
//!
//! Each class draws a face-like ellipse with a class-specific pose and eye
//! pattern on a noisy background, so the classical and neural pipelines have
//! something learnable to work with when the real dataset is absent.

use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{encode_pgm, encode_ppm, ClassLabel, DatasetError, RgbImage};
use crate::rng::{self, streams};

/// Class sizes of the bundled 60-image corpus, proportional to 412/2247/1765.
pub const BUNDLED_COUNTS: [usize; 3] = [6, 30, 24];
pub const BUNDLED_SIDE: usize = 40;
pub const BUNDLED_SEED: u64 = 2022;

pub fn render(class: ClassLabel, side: usize, seed: u64, index: u64) -> RgbImage {
    let mut rng = rng::stream(
        seed ^ (index.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        streams::SYNTH + class.id() as u64,
    );
    let s = side as f64;
    let jitter = |rng: &mut rng::Rng, r: f64| rng.random_range(-r..=r);
    let (cx, cy) = match class {
        ClassLabel::Disengaged => (
            s * 0.28 + jitter(&mut rng, 0.04 * s),
            s * 0.55 + jitter(&mut rng, 0.04 * s),
        ),
        _ => (
            s * 0.5 + jitter(&mut rng, 0.05 * s),
            s * 0.5 + jitter(&mut rng, 0.05 * s),
        ),
    };
    let (ax, ay) = (s * 0.22, s * 0.3);
    let face = 190.0 + jitter(&mut rng, 25.0);
    let background = 90.0 + jitter(&mut rng, 25.0);
    let tint = [
        1.0,
        0.85 + jitter(&mut rng, 0.05),
        0.7 + jitter(&mut rng, 0.05),
    ];
    let noise = Normal::new(0.0, 8.0).unwrap();
    let eye_dy = -0.25 * ay;
    let eye_dx = 0.4 * ax;
    RgbImage::from_fn(side, side, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let u = (px - cx) / ax;
        let v = (py - cy) / ay;
        let mut value = if u * u + v * v <= 1.0 {
            face
        } else {
            background
        };
        for sign in [-1.0, 1.0] {
            let ex = px - (cx + sign * eye_dx);
            let ey = py - (cy + eye_dy);
            let on_eye = match class {
                // eyes turned away: a single faint eye
                ClassLabel::Disengaged => sign > 0.0 && ex * ex + ey * ey <= (0.08 * s).powi(2),
                // half-closed: thin horizontal slits
                ClassLabel::PartiallyEngaged => ex.abs() <= 0.1 * s && ey.abs() <= 0.015 * s + 0.5,
                // open: round dark pupils
                ClassLabel::Engaged => ex * ex + ey * ey <= (0.07 * s).powi(2),
            };
            if on_eye {
                value = 40.0;
            }
        }
        let mut px_out = [0u8; 3];
        for (c, o) in px_out.iter_mut().enumerate() {
            let n: f64 = noise.sample(&mut rng);
            *o = (value * tint[c] + n).round().clamp(0.0, 255.0) as u8;
        }
        px_out
    })
}

/// Write `counts[c]` images per class under `root`; every fourth image is PGM.
pub fn write_corpus(
    root: &Path,
    counts: [usize; 3],
    side: usize,
    seed: u64,
) -> Result<(), DatasetError> {
    for class in ClassLabel::ALL {
        let dir = root.join(class.name());
        std::fs::create_dir_all(&dir).map_err(|e| DatasetError::Io {
            path: dir.clone(),
            source: e,
        })?;
        for i in 0..counts[class.id()] {
            let img = render(class, side, seed, i as u64);
            let (name, bytes) = if i % 4 == 3 {
                (format!("syn_{i:03}.pgm"), encode_pgm(&img))
            } else {
                (format!("syn_{i:03}.ppm"), encode_ppm(&img))
            };
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| DatasetError::Io { path, source: e })?;
        }
    }
    Ok(())
}

pub fn write_bundled(root: &Path) -> Result<(), DatasetError> {
    write_corpus(root, BUNDLED_COUNTS, BUNDLED_SIDE, BUNDLED_SEED)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{balanced_sample, scan_dataset, split, SplitConfig};

    #[test]
    fn corpus_scans_with_expected_counts() {
        let dir = tempfile::tempdir().unwrap();
        write_bundled(dir.path()).unwrap();
        let m = scan_dataset(dir.path()).unwrap();
        assert_eq!(m.len(), 60);
        assert_eq!(
            [
                m.count(ClassLabel::Disengaged),
                m.count(ClassLabel::PartiallyEngaged),
                m.count(ClassLabel::Engaged)
            ],
            [6, 30, 24]
        );
        let set = balanced_sample(&m, 1, None).unwrap();
        assert_eq!(set.len(), 18);
        let s = split(&set, &SplitConfig::default()).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (12, 6));
    }

    #[test]
    fn rendering_is_deterministic() {
        assert_eq!(
            render(ClassLabel::Engaged, 40, 5, 3),
            render(ClassLabel::Engaged, 40, 5, 3)
        );
        assert_ne!(
            render(ClassLabel::Engaged, 40, 5, 3),
            render(ClassLabel::Engaged, 40, 5, 4)
        );
    }

    #[test]
    fn scan_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            scan_dataset(dir.path()),
            Err(DatasetError::EmptyDataset)
        ));
        std::fs::create_dir(dir.path().join("disengaged")).unwrap();
        std::fs::create_dir(dir.path().join("engaged")).unwrap();
        assert!(matches!(
            scan_dataset(dir.path()),
            Err(DatasetError::MissingClassDirectory(_))
        ));
    }

    #[test]
    fn unreadable_files_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), [2, 2, 2], 8, 0).unwrap();
        std::fs::write(dir.path().join("engaged/broken.ppm"), b"P3 1 1 255 0 0 0").unwrap();
        std::fs::write(dir.path().join("engaged/notes.txt"), b"ignored").unwrap();
        let m = scan_dataset(dir.path()).unwrap();
        assert_eq!(m.len(), 6);
        assert_eq!(m.skipped, 1);
        // sorted, byte-identical rescans
        assert_eq!(m.to_json(), scan_dataset(dir.path()).unwrap().to_json());
        let paths: Vec<_> = m.entries.iter().map(|e| e.path.clone()).collect();
        let mut sorted = paths.clone();
        sorted.sort();
        assert_eq!(paths, sorted);
    }
}
