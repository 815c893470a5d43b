use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Architecture description of one layer. Activations are per-example
/// `[rows, cols, channels]` before `Flatten` and `[features]` after it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    Maxpool {
        size: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        in_features: usize,
        out_features: usize,
    },
}

impl LayerSpec {
    pub fn conv3x3(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
        }
    }

    pub fn maxpool2() -> Self {
        LayerSpec::Maxpool { size: 2, stride: 2 }
    }

    pub fn dense(in_features: usize, out_features: usize) -> Self {
        LayerSpec::Dense {
            in_features,
            out_features,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Maxpool { .. } => "maxpool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
        }
    }

    /// Per-example output shape for a per-example input shape. `layer` is
    /// only used to label the error.
    pub fn output_shape(&self, layer: usize, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |expected: String| Error::LayerShape {
            layer,
            kind: self.kind(),
            expected,
            got: input.to_vec(),
        };
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let &[h, w, c] = input else {
                    return Err(mismatch(format!("[rows, cols, {in_channels}]")));
                };
                if c != in_channels || h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return Err(mismatch(format!(
                        "[rows >= {k}, cols >= {k}, {in_channels}]",
                        k = kernel.saturating_sub(2 * padding)
                    )));
                }
                Ok(vec![
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                    out_channels,
                ])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Maxpool { size, stride } => {
                let &[h, w, c] = input else {
                    return Err(mismatch("[rows, cols, channels]".into()));
                };
                if h < size || w < size {
                    return Err(mismatch(format!("[rows >= {size}, cols >= {size}, channels]")));
                }
                Ok(vec![(h - size) / stride + 1, (w - size) / stride + 1, c])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                if input != [in_features] {
                    return Err(mismatch(format!("[{in_features}]")));
                }
                Ok(vec![out_features])
            }
        }
    }

    /// Declared (weight, bias) shapes for parameterized layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((vec![kernel, kernel, in_channels, out_channels], vec![out_channels])),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => Some((vec![out_features, in_features], vec![out_features])),
            _ => None,
        }
    }

    pub fn fan_in(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv2d {
                in_channels, kernel, ..
            } => Some(kernel * kernel * in_channels),
            LayerSpec::Dense { in_features, .. } => Some(in_features),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArch(format!("{}: {what}", self.kind())));
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 => bad("zero-sized parameter"),
            LayerSpec::Maxpool { size, stride } if size == 0 || stride == 0 => bad("zero-sized window"),
            LayerSpec::Dense {
                in_features,
                out_features,
            } if in_features == 0 || out_features == 0 => bad("zero-sized parameter"),
            _ => Ok(()),
        }
    }
}

/// A layer with its (frozen or trainable) parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T = f32> {
    pub(crate) spec: LayerSpec,
    pub(crate) params: Option<(Tensor<T>, Tensor<T>)>,
}

impl<T: Real> Layer<T> {
    pub fn new(spec: LayerSpec, params: Option<(Tensor<T>, Tensor<T>)>) -> Result<Self> {
        spec.validate()?;
        match (spec.param_shapes(), &params) {
            (None, None) => {}
            (Some((ws, bs)), Some((w, b))) if w.shape() == ws && b.shape() == bs => {}
            (Some((ws, bs)), _) => {
                return Err(Error::InvalidArch(format!(
                    "{} layer needs weight {ws:?} and bias {bs:?}",
                    spec.kind()
                )))
            }
            (None, Some(_)) => return Err(Error::InvalidArch(format!("{} layer takes no parameters", spec.kind()))),
        }
        Ok(Layer { spec, params })
    }

    /// Parameterized layers get zero weights; useful as a starting point.
    pub fn zeroed(spec: LayerSpec) -> Result<Self> {
        let params = spec.param_shapes().map(|(w, b)| (Tensor::zeros(w), Tensor::zeros(b)));
        Self::new(spec, params)
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn weight(&self) -> Option<&Tensor<T>> {
        self.params.as_ref().map(|p| &p.0)
    }

    pub fn bias(&self) -> Option<&Tensor<T>> {
        self.params.as_ref().map(|p| &p.1)
    }
}
