//! Binary PPM (P6) export of `[n, n, 3]` tensors in `[-1, 1]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_file, write_atomic};
use crate::tensor::Tensor;

/// `round((v + 1) * 127.5)` with halves rounded up, clamped to a byte.
pub fn quantize(v: f32) -> u8 {
    ((v as f64 + 1.0) * 127.5 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn dequantize(b: u8) -> f32 {
    crate::data::normalize_pixel(b)
}

pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let shape = image.shape();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(Error::Shape {
            expected: vec![0, 0, 3],
            got: shape.to_vec(),
        });
    }
    let mut out = format!("P6\n{} {}\n255\n", shape[1], shape[0]).into_bytes();
    out.extend(image.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

/// Parsed P6 image: `(width, height, rgb bytes)`.
pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    const WHAT: &str = "PPM image";
    let bad = |detail: &str| Error::Format {
        what: WHAT,
        detail: detail.to_string(),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if bytes.get(pos) == Some(&b'#') {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    if fields[0] != "P6" {
        return Err(bad("not a binary P6 file"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(bad("only 8-bit images are supported"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let data = &bytes[(pos + 1).min(bytes.len())..];
    if data.len() != width * height * 3 {
        return Err(Error::Truncated {
            what: WHAT,
            expected: width * height * 3,
            found: data.len(),
        });
    }
    Ok((width, height, data.to_vec()))
}

pub fn write_ppm(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_ppm(image)?)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    decode_ppm(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_endpoints() {
        assert_eq!(quantize(0.0), 128);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(-1.0), 0);
        assert_eq!(quantize(-0.9999), 0);
    }

    #[test]
    fn header_and_round_trip() {
        let img = Tensor::from_fn(vec![2, 3, 3], |i| i as f32 / 9.0 - 1.0);
        let bytes = encode_ppm(&img).unwrap();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        let (w, h, raster) = decode_ppm(&bytes).unwrap();
        assert_eq!((w, h), (3, 2));
        let expected: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
        assert_eq!(raster, expected);
        assert!(decode_ppm(&bytes[..bytes.len() - 1]).is_err());
    }
}
