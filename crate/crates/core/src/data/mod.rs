//! Task and host datasets.
//!
//! Images are kept as bytes and normalized on access with `p / 127.5 - 1`,
//! which maps 0 to -1 and 255 to +1 exactly. This keeps MNIST and CIFAR-10
//! resident without a 4x float blow-up while staying lossless with respect
//! to the source files.

mod cifar;
mod counting;
mod idx;
mod shapes;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use cifar::{load_cifar10, parse_cifar10, CIFAR_RECORD_BYTES};
pub use counting::{count_squares, counting_image, gen_counting, sample_layout, CountingConfig, CountingTask};
pub use idx::{load_mnist, parse_idx, IdxArray, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use shapes::{gen_shapes, ShapesConfig, SHAPE_CLASSES};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Byte to `[-1, 1]`.
#[inline]
pub fn normalize_pixel(p: u8) -> f32 {
    p as f32 / 127.5 - 1.0
}

/// One adversarial-task example: a small `[k, k, 3]` image and its label.
#[derive(Clone, Debug, PartialEq)]
pub struct AdvExample {
    pub x_small: Tensor,
    pub y_adv: usize,
}

/// Labelled square RGB images, stored channel-last as bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageSet {
    side: usize,
    num_classes: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

impl ImageSet {
    pub fn new(side: usize, num_classes: usize, pixels: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        let per = side * side * 3;
        if side == 0 || pixels.len() != per * labels.len() {
            return Err(Error::CountMismatch {
                images: pixels.len().checked_div(per).unwrap_or(0),
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::LabelRange {
                label: bad as usize,
                classes: num_classes,
            });
        }
        Ok(ImageSet {
            side,
            num_classes,
            pixels,
            labels,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.side * self.side * 3
    }

    pub fn pixels(&self, i: usize) -> &[u8] {
        let per = self.image_len();
        &self.pixels[i * per..(i + 1) * per]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Normalized `[side, side, 3]` image.
    pub fn image(&self, i: usize) -> Tensor {
        let data = self.pixels(i).iter().map(|&p| normalize_pixel(p)).collect();
        Tensor::new(vec![self.side, self.side, 3], data).unwrap()
    }

    pub fn example(&self, i: usize) -> AdvExample {
        AdvExample {
            x_small: self.image(i),
            y_adv: self.label(i),
        }
    }

    pub fn examples(&self) -> impl Iterator<Item = AdvExample> + '_ {
        (0..self.len()).map(|i| self.example(i))
    }

    pub fn subset(&self, indices: &[usize]) -> ImageSet {
        let mut pixels = Vec::with_capacity(indices.len() * self.image_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend_from_slice(self.pixels(i));
            labels.push(self.labels[i]);
        }
        ImageSet {
            side: self.side,
            num_classes: self.num_classes,
            pixels,
            labels,
        }
    }

    /// Leading `n` examples (or all, if fewer).
    pub fn head(&self, n: usize) -> ImageSet {
        let n = n.min(self.len());
        self.subset(&(0..n).collect::<Vec<_>>())
    }

    /// Splits off the trailing `n` examples.
    pub fn split_tail(&self, n: usize) -> (ImageSet, ImageSet) {
        let n = n.min(self.len());
        let cut = self.len() - n;
        (
            self.subset(&(0..cut).collect::<Vec<_>>()),
            self.subset(&(cut..self.len()).collect::<Vec<_>>()),
        )
    }

    /// Nearest-neighbour upscaling by an integer factor.
    pub fn upscale(&self, factor: usize) -> ImageSet {
        if factor == 1 {
            return self.clone();
        }
        let side = self.side * factor;
        let mut pixels = Vec::with_capacity(self.len() * side * side * 3);
        for i in 0..self.len() {
            let src = self.pixels(i);
            for y in 0..side {
                for x in 0..side {
                    let s = ((y / factor) * self.side + x / factor) * 3;
                    pixels.extend_from_slice(&src[s..s + 3]);
                }
            }
        }
        ImageSet {
            side,
            num_classes: self.num_classes,
            pixels,
            labels: self.labels.clone(),
        }
    }

    /// Normalized `[indices.len(), side, side, 3]` batch.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            data.extend(self.pixels(i).iter().map(|&p| normalize_pixel(p)));
        }
        Tensor::new(vec![indices.len(), self.side, self.side, 3], data).unwrap()
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// Host-task data: `[N, n, n, 3]` images in `[-1, 1]` with integer labels.
pub type HostDataset = ImageSet;

/// Supplies training batches for an adversarial task.
pub trait TaskSource {
    fn side(&self) -> usize;
    fn num_classes(&self) -> usize;
    /// Number of examples that make up one epoch.
    fn epoch_len(&self) -> usize;
    fn sample(&self, rng: &mut ChaCha8Rng, batch: usize) -> ImageSet;
}

/// Fixed datasets are sampled uniformly with replacement.
impl TaskSource for ImageSet {
    fn side(&self) -> usize {
        self.side
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn epoch_len(&self) -> usize {
        self.len()
    }

    fn sample(&self, rng: &mut ChaCha8Rng, batch: usize) -> ImageSet {
        let indices: Vec<usize> = (0..batch).map(|_| rng.random_range(0..self.len())).collect();
        self.subset(&indices)
    }
}
