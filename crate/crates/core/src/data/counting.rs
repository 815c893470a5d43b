//! The square-counting task.
//!
//! A 36x36 black canvas is divided into a 4x4 grid of 9x9 cells. Between 1
//! and 10 distinct cells, chosen uniformly, each hold a square drawn as a
//! 1-pixel black frame around a 7x7 white interior. The label is the number
//! of squares minus one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ImageSet, TaskSource};
use crate::error::{Error, Result};

const BLACK: u8 = 0;
const WHITE: u8 = 255;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountingConfig {
    pub image_side: usize,
    pub cell_grid: usize,
    pub square_side: usize,
    pub min_count: usize,
    pub max_count: usize,
    pub seed: u64,
}

impl Default for CountingConfig {
    fn default() -> Self {
        CountingConfig {
            image_side: 36,
            cell_grid: 4,
            square_side: 9,
            min_count: 1,
            max_count: 10,
            seed: 0,
        }
    }
}

impl CountingConfig {
    pub fn with_seed(seed: u64) -> Self {
        CountingConfig {
            seed,
            ..Self::default()
        }
    }

    pub fn cells(&self) -> usize {
        self.cell_grid * self.cell_grid
    }

    pub fn num_classes(&self) -> usize {
        self.max_count - self.min_count + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.cell_grid * self.square_side != self.image_side {
            return Err(Error::Config(format!(
                "grid {} x square {} != image side {}",
                self.cell_grid, self.square_side, self.image_side
            )));
        }
        if self.square_side < 3
            || self.min_count == 0
            || self.min_count > self.max_count
            || self.max_count > self.cells()
            || self.cells() > 64
        {
            return Err(Error::Config(format!("invalid counting geometry {self:?}")));
        }
        Ok(())
    }
}

/// `squares` distinct cells chosen uniformly, as a bit mask over cells
/// (bit `r * grid + c`).
pub fn sample_layout(rng: &mut impl Rng, cells: usize, squares: usize) -> u64 {
    let mut order: Vec<usize> = (0..cells).collect();
    for i in 0..squares {
        let j = rng.random_range(i..cells);
        order.swap(i, j);
    }
    order[..squares].iter().fold(0u64, |mask, &c| mask | 1 << c)
}

/// Renders a layout into channel-last bytes.
pub fn counting_image(cfg: &CountingConfig, layout: u64) -> Vec<u8> {
    let side = cfg.image_side;
    let sq = cfg.square_side;
    let mut img = vec![BLACK; side * side * 3];
    for cell in 0..cfg.cells() {
        if layout & (1 << cell) == 0 {
            continue;
        }
        let (r0, c0) = ((cell / cfg.cell_grid) * sq, (cell % cfg.cell_grid) * sq);
        for y in 1..sq - 1 {
            for x in 1..sq - 1 {
                let o = ((r0 + y) * side + c0 + x) * 3;
                img[o..o + 3].fill(WHITE);
            }
        }
    }
    img
}

/// Number of cells whose whole interior is white.
pub fn count_squares(cfg: &CountingConfig, pixels: &[u8]) -> usize {
    let side = cfg.image_side;
    let sq = cfg.square_side;
    (0..cfg.cells())
        .filter(|cell| {
            let (r0, c0) = ((cell / cfg.cell_grid) * sq, (cell % cfg.cell_grid) * sq);
            (1..sq - 1).all(|y| {
                (1..sq - 1).all(|x| {
                    let o = ((r0 + y) * side + c0 + x) * 3;
                    pixels[o..o + 3] == [WHITE; 3]
                })
            })
        })
        .count()
}

fn draw(cfg: &CountingConfig, rng: &mut ChaCha8Rng, count: usize) -> ImageSet {
    let mut pixels = Vec::with_capacity(count * cfg.image_side * cfg.image_side * 3);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let squares = rng.random_range(cfg.min_count..=cfg.max_count);
        let layout = sample_layout(rng, cfg.cells(), squares);
        pixels.extend_from_slice(&counting_image(cfg, layout));
        labels.push((squares - cfg.min_count) as u8);
    }
    ImageSet::new(cfg.image_side, cfg.num_classes(), pixels, labels).unwrap()
}

/// `count` images drawn deterministically from `cfg.seed`.
pub fn gen_counting(cfg: &CountingConfig, count: usize) -> Result<ImageSet> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(draw(cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed), count))
}

/// Unbounded stream of fresh counting images.
#[derive(Clone, Debug)]
pub struct CountingTask {
    cfg: CountingConfig,
}

impl CountingTask {
    pub fn new(cfg: CountingConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(CountingTask { cfg })
    }

    pub fn config(&self) -> &CountingConfig {
        &self.cfg
    }
}

impl TaskSource for CountingTask {
    fn side(&self) -> usize {
        self.cfg.image_side
    }

    fn num_classes(&self) -> usize {
        self.cfg.num_classes()
    }

    /// Nominal epoch used for the learning-rate schedule.
    fn epoch_len(&self) -> usize {
        10_000
    }

    fn sample(&self, rng: &mut ChaCha8Rng, batch: usize) -> ImageSet {
        draw(&self.cfg, rng, batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_image_matches_its_label() {
        let cfg = CountingConfig::with_seed(3);
        let set = gen_counting(&cfg, 500).unwrap();
        for i in 0..set.len() {
            assert_eq!(count_squares(&cfg, set.pixels(i)), set.label(i) + 1);
            assert!(set.pixels(i).iter().all(|&p| p == BLACK || p == WHITE));
        }
    }

    #[test]
    fn square_has_black_frame() {
        let cfg = CountingConfig::default();
        let img = counting_image(&cfg, 1);
        let at = |y: usize, x: usize| img[(y * 36 + x) * 3];
        assert_eq!(at(0, 0), BLACK);
        assert_eq!(at(8, 4), BLACK);
        assert_eq!(at(1, 1), WHITE);
        assert_eq!(at(7, 7), WHITE);
        assert_eq!(at(4, 9), BLACK);
    }

    #[test]
    fn deterministic_in_seed() {
        let a = gen_counting(&CountingConfig::with_seed(11), 50).unwrap();
        let b = gen_counting(&CountingConfig::with_seed(11), 50).unwrap();
        let c = gen_counting(&CountingConfig::with_seed(12), 50).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_inconsistent_grid() {
        let cfg = CountingConfig {
            square_side: 8,
            ..CountingConfig::default()
        };
        assert!(gen_counting(&cfg, 1).is_err());
        assert!(gen_counting(&CountingConfig::default(), 0).is_err());
    }
}
