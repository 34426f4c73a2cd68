//! Netpbm PPM / PGM reading and writing (8-bit only).
//!
//! Writers always emit binary `P6` / `P5` with a `255` maxval. Readers also
//! accept the ASCII `P3` / `P2` forms and `#` comments in the header.

use std::path::Path;

use crate::fsutil;
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum PnmError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad netpbm header: {0}")]
    Header(String),
    #[error("unsupported netpbm variant: {0}")]
    Unsupported(String),
    #[error("netpbm data truncated: expected {expected} samples, found {found}")]
    Truncated { expected: usize, found: usize },
}

/// 8-bit single-channel image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    /// `round(v × 255)` of a one-channel tensor with values in `[0, 1]`.
    pub fn from_unit_tensor(t: &Tensor) -> Self {
        Self {
            width: t.width(),
            height: t.height(),
            data: t.plane(0).iter().map(|v| to_u8(v * 255.0)).collect(),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            1,
            self.height,
            self.width,
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("image dims are consistent")
    }
}

fn to_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Binary PPM of a 3-channel tensor (values rounded and clamped to 0..=255).
pub fn encode_ppm(rgb: &Tensor) -> Vec<u8> {
    assert_eq!(rgb.channels(), 3, "PPM needs a 3-channel tensor");
    let (h, w) = (rgb.height(), rgb.width());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    let (r, g, b) = (rgb.plane(0), rgb.plane(1), rgb.plane(2));
    for i in 0..h * w {
        out.extend_from_slice(&[to_u8(r[i]), to_u8(g[i]), to_u8(b[i])]);
    }
    out
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, PnmError> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(PnmError::Header("missing P magic".into()));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(PnmError::Header("expected a number".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| PnmError::Header("number out of range".into()))?;
    }
    // exactly one whitespace byte separates the header from binary data
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(PnmError::Header("missing whitespace after maxval".into()));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(PnmError::Header("zero image dimension".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(PnmError::Unsupported(format!("maxval {maxval}")));
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval,
        data_start: pos + 1,
    })
}

fn samples(bytes: &[u8], header: &Header, ascii: bool, count: usize) -> Result<Vec<f32>, PnmError> {
    let scale = 255.0 / header.maxval as f32;
    let values: Vec<f32> = if ascii {
        std::str::from_utf8(&bytes[header.data_start..])
            .map_err(|_| PnmError::Header("non-ASCII sample data".into()))?
            .split_ascii_whitespace()
            .take(count)
            .map(|s| s.parse::<u32>().map(|v| v as f32))
            .collect::<Result<_, _>>()
            .map_err(|_| PnmError::Header("bad ASCII sample".into()))?
    } else {
        bytes[header.data_start..]
            .iter()
            .take(count)
            .map(|&v| v as f32)
            .collect()
    };
    if values.len() < count {
        return Err(PnmError::Truncated {
            expected: count,
            found: values.len(),
        });
    }
    if header.maxval == 255 {
        Ok(values)
    } else {
        Ok(values.into_iter().map(|v| (v * scale).round()).collect())
    }
}

/// Decodes a PPM into a 3-channel tensor of values in `0..=255`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor, PnmError> {
    let header = parse_header(bytes)?;
    let ascii = match &header.magic {
        b"P6" => false,
        b"P3" => true,
        m => {
            return Err(PnmError::Unsupported(format!(
                "{} (expected P6 or P3)",
                String::from_utf8_lossy(m)
            )))
        }
    };
    let n = header.width * header.height;
    let interleaved = samples(bytes, &header, ascii, 3 * n)?;
    let mut planar = vec![0.0f32; 3 * n];
    for (i, px) in interleaved.chunks_exact(3).enumerate() {
        for c in 0..3 {
            planar[c * n + i] = px[c];
        }
    }
    Ok(Tensor::new(3, header.height, header.width, planar).expect("dims checked"))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, PnmError> {
    let header = parse_header(bytes)?;
    let ascii = match &header.magic {
        b"P5" => false,
        b"P2" => true,
        m => {
            return Err(PnmError::Unsupported(format!(
                "{} (expected P5 or P2)",
                String::from_utf8_lossy(m)
            )))
        }
    };
    let data = samples(bytes, &header, ascii, header.width * header.height)?;
    Ok(GrayImage {
        width: header.width,
        height: header.height,
        data: data.into_iter().map(to_u8).collect(),
    })
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor, PnmError> {
    decode_ppm(&std::fs::read(path)?)
}

pub fn write_ppm(rgb: &Tensor, path: impl AsRef<Path>) -> Result<(), PnmError> {
    fsutil::write_atomic(path.as_ref(), &encode_ppm(rgb))?;
    Ok(())
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage, PnmError> {
    decode_pgm(&std::fs::read(path)?)
}

pub fn write_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<(), PnmError> {
    fsutil::write_atomic(path.as_ref(), &encode_pgm(img))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let t = Tensor::from_fn(3, 4, 5, |c, y, x| ((c * 97 + y * 13 + x * 7) % 256) as f32);
        let bytes = encode_ppm(&t);
        assert!(bytes.starts_with(b"P6\n5 4\n255\n"));
        assert_eq!(decode_ppm(&bytes).unwrap(), t);
    }

    #[test]
    fn ascii_with_comments() {
        let text = b"P3\n# made by hand\n2 1\n# max\n255\n255 0 0  0 128 255\n";
        let t = decode_ppm(text).unwrap();
        assert_eq!(t.dims(), (3, 1, 2));
        assert_eq!(t.data(), &[255.0, 0.0, 0.0, 128.0, 0.0, 255.0]);

        let g = decode_pgm(b"P2 3 1 15 0 15 5").unwrap();
        assert_eq!(g.data, vec![0, 255, 85]);
    }

    #[test]
    fn pgm_round_trip_and_rounding() {
        let m = Tensor::new(1, 1, 3, vec![0.0, 0.5, 1.0]).unwrap();
        let g = GrayImage::from_unit_tensor(&m);
        assert_eq!(g.data, vec![0, 128, 255]);
        assert_eq!(decode_pgm(&encode_pgm(&g)).unwrap(), g);
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(
            decode_ppm(b"P6\n2 2\n255\n\x01\x02"),
            Err(PnmError::Truncated { .. })
        ));
        assert!(matches!(
            decode_ppm(b"P5\n1 1\n255\n\x00"),
            Err(PnmError::Unsupported(_))
        ));
        assert!(matches!(
            decode_ppm(b"P6\n1 1\n65535\n"),
            Err(PnmError::Unsupported(_))
        ));
        assert!(matches!(decode_ppm(b"JPEG"), Err(PnmError::Header(_))));
    }
}
