use crate::dataset::GrayImage;

/// Inclusive prefix sums with a zero first row and column.
///
/// Built over an edge-replicated border of `pad` pixels, so box sums may
/// reach up to `pad` pixels outside the source image.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    pad: usize,
    stride: usize,
    sums: Vec<f64>,
}

impl IntegralImage {
    pub fn new(img: &GrayImage) -> Self {
        Self::padded(img, 0)
    }

    pub fn padded(img: &GrayImage, pad: usize) -> Self {
        let pw = img.width() + 2 * pad;
        let ph = img.height() + 2 * pad;
        let stride = pw + 1;
        let mut sums = vec![0.0; (ph + 1) * stride];
        for y in 0..ph {
            let mut row = 0.0;
            for x in 0..pw {
                row += img.get_clamped(x as isize - pad as isize, y as isize - pad as isize);
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self {
            width: img.width(),
            height: img.height(),
            pad,
            stride,
            sums,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Prefix-sum entry `(row, col)` of the unpadded grid: the sum of all
    /// source pixels strictly above and left of it.
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.box_sum(0, 0, col as isize, row as isize)
    }

    /// Sum over `x0 ≤ x < x1`, `y0 ≤ y < y1` in source coordinates. The
    /// rectangle is clipped to the padded domain.
    pub fn box_sum(&self, x0: isize, y0: isize, x1: isize, y1: isize) -> f64 {
        let p = self.pad as isize;
        let pw = (self.width + 2 * self.pad) as isize;
        let ph = (self.height + 2 * self.pad) as isize;
        let cx = |x: isize| (x + p).clamp(0, pw) as usize;
        let cy = |y: isize| (y + p).clamp(0, ph) as usize;
        let (ax, bx, ay, by) = (cx(x0), cx(x1), cy(y0), cy(y1));
        if bx <= ax || by <= ay {
            return 0.0;
        }
        let s = |r: usize, c: usize| self.sums[r * self.stride + c];
        s(by, bx) - s(ay, bx) - s(by, ax) + s(ay, ax)
    }
}

pub fn integral_image(img: &GrayImage) -> IntegralImage {
    IntegralImage::new(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn ones() {
        let ii = integral_image(&GrayImage::from_fn(4, 4, |_, _| 1.0));
        assert_eq!(ii.entry(4, 4), 16.0);
        assert_eq!(ii.entry(0, 3), 0.0);
        assert_eq!(ii.entry(2, 0), 0.0);
    }

    #[test]
    fn single_pixel() {
        let ii = integral_image(&GrayImage::from_fn(1, 1, |_, _| 5.5));
        assert_eq!(ii.entry(1, 1), 5.5);
    }

    #[test]
    fn box_sums_match_brute_force() {
        let mut rng = crate::rng::seeded(8);
        let img = GrayImage::from_fn(8, 8, |_, _| rng.random_range(0..256) as f64);
        let ii = integral_image(&img);
        for y0 in 0..=8 {
            for y1 in y0..=8 {
                for x0 in 0..=8 {
                    for x1 in x0..=8 {
                        let mut brute = 0.0;
                        for y in y0..y1 {
                            for x in x0..x1 {
                                brute += img.get(x, y);
                            }
                        }
                        assert_eq!(
                            ii.box_sum(x0 as isize, y0 as isize, x1 as isize, y1 as isize),
                            brute
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn padding_replicates_edges() {
        let img = GrayImage::from_fn(3, 2, |x, y| (x + 10 * y) as f64);
        let ii = IntegralImage::padded(&img, 4);
        let mut brute = 0.0;
        for y in -3..5isize {
            for x in -2..1isize {
                brute += img.get_clamped(x, y);
            }
        }
        assert_eq!(ii.box_sum(-2, -3, 1, 5), brute);
    }

    #[test]
    fn monotone_for_non_negative_sources() {
        let img = GrayImage::from_fn(6, 5, |x, y| ((x * y) % 4) as f64);
        let ii = integral_image(&img);
        for r in 0..=5 {
            for c in 0..=6 {
                if r > 0 {
                    assert!(ii.entry(r, c) >= ii.entry(r - 1, c));
                }
                if c > 0 {
                    assert!(ii.entry(r, c) >= ii.entry(r, c - 1));
                }
            }
        }
    }
}
