//! IDX files as distributed for MNIST.

use std::path::Path;

use super::ImageSet;
use crate::error::{Error, Result};
use crate::io::{read_file, ByteReader};

/// Unsigned-byte, 3-dimensional (count, rows, cols).
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// Unsigned-byte, 1-dimensional (count).
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses an unsigned-byte IDX array, checking the magic number and that the
/// payload covers every declared element.
pub fn parse_idx(bytes: &[u8], expected_magic: u32, what: &'static str) -> Result<IdxArray> {
    let mut r = ByteReader::new(bytes, what);
    let magic = r.u32_be()?;
    if magic != expected_magic {
        return Err(Error::BadMagic {
            what,
            expected: expected_magic,
            found: magic,
        });
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim)
        .map(|_| r.u32_be().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let len: usize = dims.iter().product();
    let header = 4 + 4 * ndim;
    if r.remaining() < len {
        return Err(Error::Truncated {
            what,
            expected: header + len,
            found: bytes.len(),
        });
    }
    Ok(IdxArray {
        dims,
        data: r.take(len)?.to_vec(),
    })
}

/// Loads an MNIST image/label file pair. Grayscale is replicated across
/// three channels.
pub fn load_mnist(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<ImageSet> {
    let images = parse_idx(&read_file(images_path.as_ref())?, IDX_IMAGES_MAGIC, "IDX images")?;
    let labels = parse_idx(&read_file(labels_path.as_ref())?, IDX_LABELS_MAGIC, "IDX labels")?;
    mnist_from_idx(images, labels)
}

pub(crate) fn mnist_from_idx(images: IdxArray, labels: IdxArray) -> Result<ImageSet> {
    let (count, rows, cols) = (images.dims[0], images.dims[1], images.dims[2]);
    if labels.dims[0] != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: labels.dims[0],
        });
    }
    if rows != cols {
        return Err(Error::Format {
            what: "IDX images",
            detail: format!("non-square images {rows}x{cols}"),
        });
    }
    let mut pixels = Vec::with_capacity(images.data.len() * 3);
    for &p in &images.data {
        pixels.extend_from_slice(&[p, p, p]);
    }
    ImageSet::new(rows, 10, pixels, labels.data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(count: u32, side: u32, pixels: &[u8]) -> Vec<u8> {
        let mut out = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        for d in [count, side, side] {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(pixels);
        out
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut out = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
        out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        out.extend_from_slice(labels);
        out
    }

    #[test]
    fn parses_and_replicates_channels() {
        let images = parse_idx(&idx_images(2, 2, &[0, 255, 10, 20, 1, 2, 3, 4]), IDX_IMAGES_MAGIC, "i").unwrap();
        let labels = parse_idx(&idx_labels(&[7, 3]), IDX_LABELS_MAGIC, "l").unwrap();
        let set = mnist_from_idx(images, labels).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.label(0), 7);
        let img = set.image(0);
        assert_eq!(img.shape(), &[2, 2, 3]);
        assert_eq!(&img.data()[..6], &[-1.0, -1.0, -1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn distinct_diagnostics() {
        let bad_magic = parse_idx(&idx_labels(&[1]), IDX_IMAGES_MAGIC, "i").unwrap_err();
        assert!(matches!(bad_magic, Error::BadMagic { found: 0x801, .. }));

        let truncated = parse_idx(&idx_images(2, 2, &[0; 7]), IDX_IMAGES_MAGIC, "i").unwrap_err();
        assert!(matches!(
            truncated,
            Error::Truncated {
                expected: 24,
                found: 23,
                ..
            }
        ));

        let short_header = parse_idx(&[0, 0, 8, 3, 0], IDX_IMAGES_MAGIC, "i").unwrap_err();
        assert!(matches!(short_header, Error::Truncated { .. }));

        let images = parse_idx(&idx_images(2, 1, &[0, 0]), IDX_IMAGES_MAGIC, "i").unwrap();
        let labels = parse_idx(&idx_labels(&[1]), IDX_LABELS_MAGIC, "l").unwrap();
        assert!(matches!(
            mnist_from_idx(images, labels),
            Err(Error::CountMismatch { images: 2, labels: 1 })
        ));
    }
}
