//! Binary PPM (P6) and PGM (P5) decoding and encoding, maxval 255 only.

use std::path::Path;

use super::{DatasetError, RgbImage};

pub fn load_image(path: &Path) -> Result<RgbImage, DatasetError> {
    let bytes = std::fs::read(path).map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    decode(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<usize, DatasetError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(if self.pos >= self.bytes.len() {
                DatasetError::TruncatedFile
            } else {
                DatasetError::MalformedHeader
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(DatasetError::MalformedHeader)
    }
}

pub fn decode(bytes: &[u8]) -> Result<RgbImage, DatasetError> {
    if bytes.len() < 2 {
        return Err(DatasetError::BadMagic);
    }
    let channels = match &bytes[..2] {
        b"P6" => 3,
        b"P5" => 1,
        _ => return Err(DatasetError::BadMagic),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number()?;
    let height = cur.number()?;
    let maxval = cur.number()?;
    if maxval != 255 {
        return Err(DatasetError::UnsupportedMaxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(DatasetError::MalformedHeader);
    }
    // exactly one whitespace byte separates the header from the raster
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(DatasetError::TruncatedFile);
    }
    let data = &bytes[cur.pos + 1..];
    let need = width * height * channels;
    if data.len() < need {
        return Err(DatasetError::TruncatedFile);
    }
    let pixels = if channels == 3 {
        data[..need]
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect()
    } else {
        data[..need].iter().map(|&v| [v, v, v]).collect()
    };
    Ok(RgbImage::new(width, height, pixels).expect("dimensions validated"))
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().flatten());
    out
}

/// Encodes the first channel only.
pub fn encode_pgm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|p| p[0]));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p6_two_by_two() {
        let mut bytes = b"P6 2 2 255\n".to_vec();
        let raster: Vec<u8> = (1..=12).collect();
        bytes.extend(&raster);
        let img = decode(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (2, 2));
        assert_eq!(
            img.pixels().iter().flatten().copied().collect::<Vec<_>>(),
            raster
        );
    }

    #[test]
    fn p5_replicates_channels() {
        let mut bytes = b"P5\n# comment line\n3 1\n255\n".to_vec();
        bytes.extend([10, 20, 30]);
        let img = decode(&bytes).unwrap();
        assert_eq!(img.pixels(), &[[10; 3], [20; 3], [30; 3]]);
    }

    #[test]
    fn ascii_ppm_is_bad_magic() {
        assert!(matches!(
            decode(b"P3 1 1 255 0 0 0"),
            Err(DatasetError::BadMagic)
        ));
    }

    #[test]
    fn sixteen_bit_pgm_rejected() {
        let mut bytes = b"P5 1 1 65535\n".to_vec();
        bytes.extend([0, 0]);
        assert!(matches!(
            decode(&bytes),
            Err(DatasetError::UnsupportedMaxval(65535))
        ));
    }

    #[test]
    fn short_raster_is_truncated() {
        let mut bytes = b"P6 2 2 255\n".to_vec();
        bytes.extend([0; 11]);
        assert!(matches!(decode(&bytes), Err(DatasetError::TruncatedFile)));
        assert!(matches!(decode(b"P6 2"), Err(DatasetError::TruncatedFile)));
    }

    #[test]
    fn encode_decode_round_trip() {
        let img = RgbImage::from_fn(5, 3, |x, y| [x as u8, y as u8, (x * y) as u8]);
        assert_eq!(decode(&encode_ppm(&img)).unwrap(), img);
    }
}
