//! Binary (P5) PGM decoding and encoding.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("not a binary PGM file (expected magic `P5`)")]
    BadMagic,
    #[error("malformed PGM header: {0}")]
    BadHeader(String),
    #[error("unsupported maxval {0} (expected 1..=65535)")]
    UnsupportedMaxval(u64),
    #[error("pixel data truncated: expected {expected} bytes, found {found}")]
    TruncatedData { expected: usize, found: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Decoded grayscale raster with its declared maxval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Row-major samples.
    pub data: Vec<u16>,
}

/// Single-channel nonnegative heatmap, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl From<PgmImage> for SaliencyMap {
    fn from(img: PgmImage) -> Self {
        SaliencyMap {
            width: img.width,
            height: img.height,
            values: img.data.into_iter().map(f64::from).collect(),
        }
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u64, PgmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PgmError::BadHeader(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PgmError::BadHeader(format!("{what} is too large")))
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<PgmImage, PgmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(PgmError::BadMagic);
    }
    let mut h = Header { bytes, pos: 2 };
    if !h.bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(PgmError::BadMagic);
    }
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(PgmError::BadHeader(format!("zero dimension {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(PgmError::UnsupportedMaxval(maxval));
    }
    match h.bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(PgmError::BadHeader("missing whitespace after maxval".into())),
    }

    let bytes_per_sample = if maxval > 255 { 2 } else { 1 };
    let count = (width as usize)
        .checked_mul(height as usize)
        .filter(|c| c.checked_mul(bytes_per_sample).is_some())
        .ok_or_else(|| PgmError::BadHeader("dimensions overflow".into()))?;
    let expected = count * bytes_per_sample;
    let payload = &bytes[h.pos..];
    if payload.len() < expected {
        return Err(PgmError::TruncatedData {
            expected,
            found: payload.len(),
        });
    }
    let data = if bytes_per_sample == 1 {
        payload[..count].iter().map(|&b| u16::from(b)).collect()
    } else {
        payload[..expected]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    Ok(PgmImage {
        width: width as usize,
        height: height as usize,
        maxval: maxval as u16,
        data,
    })
}

pub fn read_pgm_image(path: impl AsRef<Path>) -> Result<PgmImage, PgmError> {
    decode_pgm(&std::fs::read(path)?)
}

/// Reads a P5 file as a saliency map; samples are copied as reals.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<SaliencyMap, PgmError> {
    read_pgm_image(path).map(SaliencyMap::from)
}

/// Encodes samples as P5. Panics if the data length or a sample disagrees with the header.
pub fn encode_pgm(img: &PgmImage) -> Vec<u8> {
    assert_eq!(img.data.len(), img.width * img.height);
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    for &v in &img.data {
        assert!(v <= img.maxval, "sample exceeds maxval");
        if img.maxval > 255 {
            out.extend_from_slice(&v.to_be_bytes());
        } else {
            out.push(v as u8);
        }
    }
    out
}

pub fn write_pgm(path: impl AsRef<Path>, img: &PgmImage) -> Result<(), PgmError> {
    std::fs::write(path, encode_pgm(img))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_8bit() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 128, 255, 64]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!((img.width, img.height, img.maxval), (2, 2, 255));
        assert_eq!(img.data, vec![0, 128, 255, 64]);
        let map = SaliencyMap::from(img);
        assert_eq!(map.values, vec![0.0, 128.0, 255.0, 64.0]);
    }

    #[test]
    fn decodes_16bit_big_endian_with_comments() {
        let mut bytes = b"P5 # comment\n# another\n2 1 # dims\n65535\n".to_vec();
        bytes.extend_from_slice(&[0x01, 0x02, 0xff, 0xfe]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.data, vec![0x0102, 0xfffe]);
        assert_eq!(decode_pgm(&encode_pgm(&img)).unwrap(), img);
    }

    #[test]
    fn rejects_ascii_variant() {
        assert!(matches!(decode_pgm(b"P2\n2 2\n255\n0 1 2 3\n"), Err(PgmError::BadMagic)));
        assert!(matches!(decode_pgm(b"P5"), Err(PgmError::BadMagic)));
        assert!(matches!(decode_pgm(b"P55 1 1 255\n\0"), Err(PgmError::BadMagic)));
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut bytes = b"P5\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3]);
        assert!(matches!(
            decode_pgm(&bytes),
            Err(PgmError::TruncatedData { expected: 6, found: 3 })
        ));
    }

    #[test]
    fn rejects_bad_maxval() {
        assert!(matches!(decode_pgm(b"P5\n1 1\n0\n\0"), Err(PgmError::UnsupportedMaxval(0))));
        assert!(matches!(
            decode_pgm(b"P5\n1 1\n70000\n\0\0"),
            Err(PgmError::UnsupportedMaxval(70000))
        ));
    }

    #[test]
    fn rejects_malformed_headers() {
        for bad in [
            &b"P5\n"[..],
            b"P5\nx 2\n255\n",
            b"P5\n2\n",
            b"P5\n0 2 255\n",
            b"P5\n2 2 255",
            b"P5\n99999999999999999999999 1 255\n",
            b"P5\n4294967295 4294967295 65535\n",
        ] {
            assert!(decode_pgm(bad).is_err(), "accepted {:?}", String::from_utf8_lossy(bad));
        }
    }
}
