//! Procedural 10-class colour image task used to train hosts when no
//! CIFAR-10 files are available.
//!
//! Each 32x32 image shows one figure (a solid shape, an outline, or a
//! striped/checkered patch) in a random colour, position and size over a
//! random colour gradient with pixel noise. The class is the figure type.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ImageSet;
use crate::error::{Error, Result};

pub const SHAPE_CLASSES: [&str; 10] = [
    "disk",
    "square",
    "triangle",
    "ring",
    "plus",
    "horizontal-stripes",
    "vertical-stripes",
    "diagonal-stripes",
    "checkerboard",
    "x-cross",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapesConfig {
    pub side: usize,
    /// Standard deviation of the additive pixel noise, in byte units.
    pub noise: f64,
    pub seed: u64,
}

impl Default for ShapesConfig {
    fn default() -> Self {
        ShapesConfig {
            side: 32,
            noise: 18.0,
            seed: 0,
        }
    }
}

fn random_colour(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [
        rng.random_range(0.0..255.0),
        rng.random_range(0.0..255.0),
        rng.random_range(0.0..255.0),
    ]
}

fn contrasting_colour(rng: &mut ChaCha8Rng, against: [f64; 3]) -> [f64; 3] {
    loop {
        let c = random_colour(rng);
        let dist: f64 = c.iter().zip(&against).map(|(a, b)| (a - b).abs()).sum();
        if dist > 180.0 {
            return c;
        }
    }
}

/// Whether pixel centre `(y, x)` lies on the figure of class `class`.
/// `(cy, cx)` is the figure centre, `r` its half-size, `period`/`phase`
/// parametrize the periodic patterns.
fn covers(class: usize, y: f64, x: f64, cy: f64, cx: f64, r: f64, period: f64) -> bool {
    let (dy, dx) = (y - cy, x - cx);
    let inside_box = dy.abs() <= r && dx.abs() <= r;
    let arm = (r / 3.5).max(1.2);
    match class {
        0 => dy * dy + dx * dx <= r * r,
        1 => dy.abs() <= r * 0.85 && dx.abs() <= r * 0.85,
        2 => {
            // Upward isosceles triangle inscribed in the box.
            let t = (dy + r) / (2.0 * r);
            inside_box && dx.abs() <= t * r
        }
        3 => {
            let d = (dy * dy + dx * dx).sqrt();
            d <= r && d >= r - arm
        }
        4 => inside_box && (dy.abs() <= arm / 1.2 || dx.abs() <= arm / 1.2),
        5 => inside_box && (dy + 64.0).rem_euclid(period) < period / 2.0,
        6 => inside_box && (dx + 64.0).rem_euclid(period) < period / 2.0,
        7 => inside_box && (dy + dx + 128.0).rem_euclid(period * 1.4) < period * 0.7,
        8 => {
            inside_box && ((((dy + 64.0) / period).floor() + ((dx + 64.0) / period).floor()) as i64).rem_euclid(2) == 0
        }
        9 => inside_box && ((dy - dx).abs() <= arm / 1.2 || (dy + dx).abs() <= arm / 1.2),
        _ => unreachable!(),
    }
}

fn draw_image(cfg: &ShapesConfig, rng: &mut ChaCha8Rng, class: usize, noise: &Normal<f64>) -> Vec<u8> {
    let side = cfg.side as f64;
    let bg_a = random_colour(rng);
    let bg_b = random_colour(rng);
    let mean_bg = [
        (bg_a[0] + bg_b[0]) / 2.0,
        (bg_a[1] + bg_b[1]) / 2.0,
        (bg_a[2] + bg_b[2]) / 2.0,
    ];
    let fg = contrasting_colour(rng, mean_bg);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (gy, gx) = (angle.sin(), angle.cos());
    let r = rng.random_range(side * 0.18..side * 0.38);
    let cy = rng.random_range(r..side - r);
    let cx = rng.random_range(r..side - r);
    let period = rng.random_range(3.0..6.5f64).round();

    let mut out = Vec::with_capacity(cfg.side * cfg.side * 3);
    for yi in 0..cfg.side {
        for xi in 0..cfg.side {
            let (y, x) = (yi as f64 + 0.5, xi as f64 + 0.5);
            let t = (((y / side - 0.5) * gy + (x / side - 0.5) * gx) + 0.75) / 1.5;
            let on = covers(class, y, x, cy, cx, r, period);
            for ch in 0..3 {
                let base = if on {
                    fg[ch]
                } else {
                    bg_a[ch] * (1.0 - t) + bg_b[ch] * t
                };
                let v = base + noise.sample(rng);
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

/// `count` images with classes cycling 0..10 in a seeded random order.
pub fn gen_shapes(cfg: &ShapesConfig, count: usize) -> Result<ImageSet> {
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    if cfg.side < 8 {
        return Err(Error::Config(format!("shape images need side >= 8, got {}", cfg.side)));
    }
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pixels = Vec::with_capacity(count * cfg.side * cfg.side * 3);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let class = rng.random_range(0..SHAPE_CLASSES.len());
        pixels.extend_from_slice(&draw_image(cfg, &mut rng, class, &noise));
        labels.push(class as u8);
    }
    ImageSet::new(cfg.side, SHAPE_CLASSES.len(), pixels, labels)
}
