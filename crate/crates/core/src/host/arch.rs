//! Registered host architectures and random initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::{HostModel, Layer, LayerSpec, Provenance};
use crate::tensor::Tensor;

/// Default desk-scale host: three conv/relu/pool stages and a dense head
/// over 64x64x3 inputs.
pub const DESK_CONV: &str = "desk-conv";
/// A single dense layer over 64x64x3 inputs. Affine, hence not reprogrammable.
pub const DESK_LINEAR: &str = "desk-linear";
/// A 12x12x3 network using every layer kind; small enough for exhaustive
/// gradient checks.
pub const TINY_CONV: &str = "tiny-conv";

pub const ARCHITECTURES: &[&str] = &[DESK_CONV, DESK_LINEAR, TINY_CONV];

#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub name: &'static str,
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

pub fn architecture(name: &str) -> Result<Architecture> {
    let (name, input_shape, layers) = match name {
        DESK_CONV => (
            DESK_CONV,
            [64, 64, 3],
            vec![
                LayerSpec::conv3x3(3, 32),
                LayerSpec::Relu,
                LayerSpec::maxpool2(),
                LayerSpec::conv3x3(32, 64),
                LayerSpec::Relu,
                LayerSpec::maxpool2(),
                LayerSpec::conv3x3(64, 128),
                LayerSpec::Relu,
                LayerSpec::maxpool2(),
                LayerSpec::Flatten,
                LayerSpec::dense(8 * 8 * 128, 10),
            ],
        ),
        DESK_LINEAR => (
            DESK_LINEAR,
            [64, 64, 3],
            vec![LayerSpec::Flatten, LayerSpec::dense(64 * 64 * 3, 10)],
        ),
        TINY_CONV => (
            TINY_CONV,
            [12, 12, 3],
            vec![
                LayerSpec::conv3x3(3, 4),
                LayerSpec::Relu,
                LayerSpec::maxpool2(),
                LayerSpec::Conv2d {
                    in_channels: 4,
                    out_channels: 6,
                    kernel: 3,
                    stride: 1,
                    padding: 0,
                },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::dense(4 * 4 * 6, 10),
            ],
        ),
        other => return Err(Error::UnknownArch(other.to_string())),
    };
    Ok(Architecture {
        name,
        input_shape,
        layers,
    })
}

/// He-normal initialization: weights ~ N(0, 2 / fan_in), biases zero.
pub fn init_random(arch_name: &str, seed: u64) -> Result<HostModel> {
    init_random_scaled(arch_name, seed, 1.0)
}

/// As [`init_random`] with every weight standard deviation multiplied by
/// `scale`.
pub fn init_random_scaled(arch_name: &str, seed: u64, scale: f64) -> Result<HostModel> {
    let arch = architecture(arch_name)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(arch.layers.len());
    for spec in arch.layers {
        let params = match (spec.param_shapes(), spec.fan_in()) {
            (Some((ws, bs)), Some(fan_in)) => {
                let std = scale * (2.0 / fan_in as f64).sqrt();
                let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                let w = Tensor::from_fn(ws, |_| normal.sample(&mut rng) as f32);
                Some((w, Tensor::zeros(bs)))
            }
            _ => None,
        };
        layers.push(Layer::new(spec, params)?);
    }
    let mut model = HostModel::new(arch.name, arch.input_shape, layers, Provenance::Random)?;
    model.metadata.seed = Some(seed);
    model.metadata.init_scale = Some(scale);
    Ok(model)
}
