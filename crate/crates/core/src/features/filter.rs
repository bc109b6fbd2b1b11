use crate::dataset::GrayImage;

pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with edge replication. `sigma <= 0` is the identity.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (img.width(), img.height());
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * img.get_clamped(x as isize + i as isize - r, y as isize);
            }
            tmp[y * w + x] = acc;
        }
    }
    let tmp = GrayImage::new(w, h, tmp).expect("same shape");
    GrayImage::from_fn(w, h, |x, y| {
        k.iter()
            .enumerate()
            .map(|(i, kv)| kv * tmp.get_clamped(x as isize, y as isize + i as isize - r))
            .sum()
    })
}

/// Keep every second pixel in both directions.
pub fn downsample(img: &GrayImage) -> GrayImage {
    let w = img.width().div_ceil(2);
    let h = img.height().div_ceil(2);
    GrayImage::from_fn(w, h, |x, y| img.get(2 * x, 2 * y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalised_and_symmetric() {
        let k = gaussian_kernel(1.6);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..k.len() {
            assert!((k[i] - k[k.len() - 1 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn blur_preserves_constants() {
        let img = GrayImage::from_fn(9, 7, |_, _| 3.0);
        let b = gaussian_blur(&img, 2.0);
        assert!(b.pixels().iter().all(|v| (v - 3.0).abs() < 1e-12));
    }
}
