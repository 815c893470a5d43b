use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ImageSet;
use crate::error::{Error, Result};
use crate::io::{read_file, write_atomic, ByteReader};
use crate::tensor::{Real, Tensor};

pub const PROGRAM_MAGIC: &[u8; 4] = b"ARPG";
pub const PROGRAM_VERSION: u32 = 1;

/// Placement of the `k x k` task image inside the `n x n` host canvas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub n: usize,
    pub k: usize,
    /// Top-left corner (row, col) of the data region.
    pub offset: (usize, usize),
}

impl Geometry {
    pub fn centered(n: usize, k: usize) -> Result<Self> {
        if k > n {
            return Err(Error::Geometry(format!("task image side {k} exceeds host side {n}")));
        }
        Self::with_offset(n, k, ((n - k) / 2, (n - k) / 2))
    }

    pub fn with_offset(n: usize, k: usize, offset: (usize, usize)) -> Result<Self> {
        if k == 0 || n == 0 {
            return Err(Error::Geometry("sides must be positive".into()));
        }
        if offset.0 + k > n || offset.1 + k > n {
            return Err(Error::Geometry(format!(
                "{k}x{k} region at {offset:?} does not fit in {n}x{n}"
            )));
        }
        Ok(Geometry { n, k, offset })
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.n, self.n, 3]
    }

    pub fn in_data_region(&self, row: usize, col: usize) -> bool {
        (self.offset.0..self.offset.0 + self.k).contains(&row) && (self.offset.1..self.offset.1 + self.k).contains(&col)
    }

    /// Binary mask: 0 on the data region, 1 elsewhere.
    pub fn mask<T: Real>(&self) -> Tensor<T> {
        let n = self.n;
        Tensor::from_fn(self.shape(), |i| {
            let (row, col) = (i / 3 / n, i / 3 % n);
            if self.in_data_region(row, col) {
                T::zero()
            } else {
                T::one()
            }
        })
    }

    /// Offset of canvas pixel `(row + offset.0, col + offset.1)` in a
    /// channel-last `[n, n, 3]` buffer.
    fn canvas_index(&self, row: usize, col: usize) -> usize {
        ((row + self.offset.0) * self.n + col + self.offset.1) * 3
    }
}

/// tanh, clamped to the largest representable magnitude below one so the
/// program stays strictly inside (-1, 1) even where tanh rounds to 1.
pub fn bounded_tanh<T: Real>(x: T) -> T {
    let limit = T::one() - T::epsilon() / T::from_f64(2.0);
    x.tanh().max(-limit).min(limit)
}

/// Learnable program parameters `W`, the mask `M`, and their geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialProgram<T = f32> {
    w: Tensor<T>,
    mask: Tensor<T>,
    geometry: Geometry,
}

impl<T: Real> AdversarialProgram<T> {
    /// Program with `W = 0`.
    pub fn new(geometry: Geometry) -> Self {
        AdversarialProgram {
            w: Tensor::zeros(geometry.shape()),
            mask: geometry.mask(),
            geometry,
        }
    }

    pub fn from_weights(geometry: Geometry, w: Tensor<T>) -> Result<Self> {
        Self::from_parts(geometry, w, geometry.mask())
    }

    /// Rejects masks that are not exactly the geometry's 0/1 mask.
    pub fn from_parts(geometry: Geometry, w: Tensor<T>, mask: Tensor<T>) -> Result<Self> {
        let shape = geometry.shape();
        for t in [&w, &mask] {
            if t.shape() != shape {
                return Err(Error::Shape {
                    expected: shape.clone(),
                    got: t.shape().to_vec(),
                });
            }
        }
        if mask != geometry.mask() {
            return Err(Error::Geometry("mask does not match the data region".into()));
        }
        Ok(AdversarialProgram { w, mask, geometry })
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.w
    }

    pub fn weights_mut(&mut self) -> &mut Tensor<T> {
        &mut self.w
    }

    pub fn mask(&self) -> &Tensor<T> {
        &self.mask
    }

    /// `P = tanh(W ⊙ M)`.
    pub fn squash(&self) -> Tensor<T> {
        let data = self
            .w
            .data()
            .iter()
            .zip(self.mask.data())
            // A negative weight times a zero mask is -0.0; masked
            // coordinates are written as +0.0 instead.
            .map(|(&w, &m)| if m == T::zero() { T::zero() } else { bounded_tanh(w * m) })
            .collect();
        Tensor::new(self.geometry.shape(), data).unwrap()
    }

    pub fn cast<U: Real>(&self) -> AdversarialProgram<U> {
        AdversarialProgram {
            w: self.w.cast(),
            mask: self.mask.cast(),
            geometry: self.geometry,
        }
    }
}

pub fn squash_program<T: Real>(program: &AdversarialProgram<T>) -> Tensor<T> {
    program.squash()
}

/// Places a `[k, k, 3]` image on an otherwise zero `[n, n, 3]` canvas.
pub fn embed<T: Real>(x_small: &Tensor<T>, geometry: &Geometry) -> Result<Tensor<T>> {
    let Geometry { n, k, .. } = *geometry;
    if k > n {
        return Err(Error::Geometry(format!("task image side {k} exceeds host side {n}")));
    }
    if x_small.shape() != [k, k, 3] {
        return Err(Error::Shape {
            expected: vec![k, k, 3],
            got: x_small.shape().to_vec(),
        });
    }
    let mut canvas = Tensor::zeros(geometry.shape());
    for row in 0..k {
        let src = &x_small.data()[row * k * 3..(row + 1) * k * 3];
        let dst = geometry.canvas_index(row, 0);
        canvas.data_mut()[dst..dst + k * 3].copy_from_slice(src);
    }
    Ok(canvas)
}

/// `X_adv = X̃ + P`.
pub fn adv_image<T: Real>(x_tilde: &Tensor<T>, program: &Tensor<T>) -> Result<Tensor<T>> {
    if x_tilde.shape() != program.shape() {
        return Err(Error::Shape {
            expected: program.shape().to_vec(),
            got: x_tilde.shape().to_vec(),
        });
    }
    let data = x_tilde
        .data()
        .iter()
        .zip(program.data())
        .map(|(&a, &b)| a + b)
        .collect();
    Tensor::new(x_tilde.shape().to_vec(), data)
}

/// Adversarial images `[batch, n, n, 3]` for every image in `set`, given the
/// squashed program `p`. Equivalent to `adv_image(embed(x), p)` per image.
pub fn adv_batch<T: Real>(p: &Tensor<T>, set: &ImageSet, geometry: &Geometry) -> Result<Tensor<T>> {
    if set.side() != geometry.k {
        return Err(Error::Geometry(format!(
            "task images are {0}x{0}, geometry expects {1}x{1}",
            set.side(),
            geometry.k
        )));
    }
    let per = p.len();
    let k = geometry.k;
    let mut data = Vec::with_capacity(set.len() * per);
    for i in 0..set.len() {
        let start = data.len();
        data.extend_from_slice(p.data());
        let canvas = &mut data[start..start + per];
        let pixels = set.pixels(i);
        for row in 0..k {
            let dst = geometry.canvas_index(row, 0);
            for (c, &px) in canvas[dst..dst + k * 3]
                .iter_mut()
                .zip(&pixels[row * k * 3..(row + 1) * k * 3])
            {
                *c = T::from_f64(crate::data::normalize_pixel(px) as f64) + *c;
            }
        }
    }
    let mut shape = vec![set.len()];
    shape.extend(geometry.shape());
    Tensor::new(shape, data)
}

pub fn encode_program(program: &AdversarialProgram) -> Vec<u8> {
    let g = program.geometry;
    let mut out = Vec::with_capacity(28 + 8 * program.w.len());
    out.extend_from_slice(PROGRAM_MAGIC);
    out.extend_from_slice(&PROGRAM_VERSION.to_le_bytes());
    for v in [g.n, g.k, g.offset.0, g.offset.1] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for t in [&program.w, &program.mask] {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_program(bytes: &[u8]) -> Result<AdversarialProgram> {
    const WHAT: &str = "program file";
    let mut r = ByteReader::new(bytes, WHAT);
    let magic = r.take(4)?;
    if magic != PROGRAM_MAGIC {
        return Err(Error::BadMagic {
            what: WHAT,
            expected: u32::from_be_bytes(*PROGRAM_MAGIC),
            found: u32::from_be_bytes(magic.try_into().unwrap()),
        });
    }
    let version = r.u32_le()?;
    if version != PROGRAM_VERSION {
        return Err(Error::Version { what: WHAT, version });
    }
    let n = r.u32_le()? as usize;
    let k = r.u32_le()? as usize;
    let offset = (r.u32_le()? as usize, r.u32_le()? as usize);
    let geometry = Geometry::with_offset(n, k, offset)?;
    let len = n * n * 3;
    let w = Tensor::new(geometry.shape(), r.f32_le_vec(len)?)?;
    let mask = Tensor::new(geometry.shape(), r.f32_le_vec(len)?)?;
    if r.remaining() != 0 {
        return Err(Error::Format {
            what: WHAT,
            detail: format!("{} trailing bytes", r.remaining()),
        });
    }
    AdversarialProgram::from_parts(geometry, w, mask)
}

pub fn save_program(program: &AdversarialProgram, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_program(program))
}

pub fn load_program(path: impl AsRef<Path>) -> Result<AdversarialProgram> {
    decode_program(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_checks() {
        let g = Geometry::centered(64, 36).unwrap();
        assert_eq!(g.offset, (14, 14));
        assert_eq!(Geometry::centered(64, 28).unwrap().offset, (18, 18));
        assert!(Geometry::centered(10, 11).is_err());
        assert!(Geometry::with_offset(10, 4, (7, 0)).is_err());
        let full = Geometry::centered(8, 8).unwrap();
        assert!(full.mask::<f32>().data().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn mask_annihilates_large_weights() {
        let g = Geometry::centered(6, 2).unwrap();
        let w = Tensor::full(g.shape(), 1000.0f32);
        let p = AdversarialProgram::from_weights(g, w).unwrap().squash();
        let at = |r: usize, c: usize| p.data()[(r * 6 + c) * 3];
        assert_eq!(at(2, 2), 0.0);
        assert_eq!(at(3, 3), 0.0);
        assert!(at(0, 0) > 0.99 && at(0, 0) < 1.0);
    }

    #[test]
    fn embed_rejects_wrong_side() {
        let g = Geometry::centered(6, 2).unwrap();
        assert!(embed(&Tensor::<f32>::zeros(vec![3, 3, 3]), &g).is_err());
        let bad = Geometry {
            n: 2,
            k: 3,
            offset: (0, 0),
        };
        assert!(matches!(
            embed(&Tensor::<f32>::zeros(vec![3, 3, 3]), &bad),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn mismatched_mask_rejected() {
        let g = Geometry::centered(4, 2).unwrap();
        let mut mask = g.mask::<f32>();
        mask.data_mut()[0] = 0.0;
        assert!(AdversarialProgram::from_parts(g, Tensor::zeros(g.shape()), mask).is_err());
    }
}
