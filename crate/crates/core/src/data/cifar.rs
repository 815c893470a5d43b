//! CIFAR-10 binary batches: per record one label byte, then 1024 red,
//! 1024 green and 1024 blue bytes, each plane row-major 32x32.

use std::path::Path;

use super::ImageSet;
use crate::error::{Error, Result};
use crate::io::read_file;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

/// Parses one batch file's bytes into channel-last images.
pub fn parse_cifar10(bytes: &[u8], path: &Path) -> Result<ImageSet> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD_BYTES) {
        return Err(Error::RecordSize {
            path: path.to_path_buf(),
            len: bytes.len(),
            record: CIFAR_RECORD_BYTES,
        });
    }
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let records = bytes.len() / CIFAR_RECORD_BYTES;
    let mut pixels = Vec::with_capacity(records * 3 * plane);
    let mut labels = Vec::with_capacity(records);
    for record in bytes.chunks_exact(CIFAR_RECORD_BYTES) {
        labels.push(record[0]);
        let planes = &record[1..];
        for i in 0..plane {
            pixels.extend_from_slice(&[planes[i], planes[plane + i], planes[2 * plane + i]]);
        }
    }
    ImageSet::new(CIFAR_SIDE, 10, pixels, labels)
}

/// Loads and concatenates batch files in the order given.
pub fn load_cifar10<P: AsRef<Path>>(paths: &[P]) -> Result<ImageSet> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let set = parse_cifar10(&read_file(path)?, path)?;
        for i in 0..set.len() {
            pixels.extend_from_slice(set.pixels(i));
        }
        labels.extend_from_slice(set.labels());
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    ImageSet::new(CIFAR_SIDE, 10, pixels, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interleaves_planes() {
        let mut record = vec![0u8; CIFAR_RECORD_BYTES];
        record[0] = 3;
        record[1] = 10; // red (0, 0)
        record[1 + 1024] = 20; // green (0, 0)
        record[1 + 2048 + 33] = 30; // blue (1, 1)
        let set = parse_cifar10(&record, Path::new("x")).unwrap();
        assert_eq!(set.label(0), 3);
        assert_eq!(&set.pixels(0)[..3], &[10, 20, 0]);
        assert_eq!(set.pixels(0)[(32 + 1) * 3 + 2], 30);
    }

    #[test]
    fn rejects_partial_records() {
        let err = parse_cifar10(&vec![0u8; CIFAR_RECORD_BYTES + 5], Path::new("b.bin")).unwrap_err();
        assert!(matches!(
            err,
            Error::RecordSize {
                len: 3078,
                record: 3073,
                ..
            }
        ));
    }
}
