use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::layer::{Layer, LayerSpec};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

static NEXT_MODEL_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Trained,
    Random,
    AdversariallyTrained,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Trained => "trained",
            Provenance::Random => "random",
            Provenance::AdversariallyTrained => "adversarially_trained",
        }
    }
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Free-form training record kept with the model file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelMetadata {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub host_task: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fgsm_epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_train_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub held_out_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub held_out_fgsm_accuracy: Option<f64>,
}

/// A feedforward classifier over `[n, n, 3]` images.
///
/// Every mutation of the parameters assigns a fresh model id, so forward
/// traces taken before the change are rejected by the backward pass.
#[derive(Clone, Debug)]
pub struct HostModel<T = f32> {
    arch: String,
    input_shape: [usize; 3],
    num_labels: usize,
    provenance: Provenance,
    layers: Vec<Layer<T>>,
    pub metadata: ModelMetadata,
    id: u64,
}

impl<T: Real> PartialEq for HostModel<T> {
    /// Equality of architecture, parameters and metadata; the id is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.input_shape == other.input_shape
            && self.num_labels == other.num_labels
            && self.provenance == other.provenance
            && self.layers == other.layers
            && self.metadata == other.metadata
    }
}

impl<T: Real> HostModel<T> {
    pub fn new(
        arch: impl Into<String>,
        input_shape: [usize; 3],
        layers: Vec<Layer<T>>,
        provenance: Provenance,
    ) -> Result<Self> {
        let mut shape = input_shape.to_vec();
        for (i, layer) in layers.iter().enumerate() {
            shape = layer.spec.output_shape(i, &shape)?;
        }
        let num_labels = match shape.as_slice() {
            &[n] if n >= 10 => n,
            _ => {
                return Err(Error::InvalidArch(format!(
                    "network must end in a logit vector of length >= 10, ends in {shape:?}"
                )))
            }
        };
        Ok(HostModel {
            arch: arch.into(),
            input_shape,
            num_labels,
            provenance,
            layers,
            metadata: ModelMetadata::default(),
            id: next_id(),
        })
    }

    pub fn arch(&self) -> &str {
        &self.arch
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    /// Input image side `n`.
    pub fn side(&self) -> usize {
        self.input_shape[0]
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn set_provenance(&mut self, provenance: Provenance) {
        self.provenance = provenance;
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Per-example shapes of every activation, input first, logits last.
    pub fn activation_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = vec![self.input_shape.to_vec()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .spec
                .output_shape(i, shapes.last().unwrap())
                .expect("validated at construction");
            shapes.push(next);
        }
        shapes
    }

    /// Weight and bias tensors in declaration order.
    pub fn parameters(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers
            .iter()
            .filter_map(|l| l.params.as_ref())
            .flat_map(|(w, b)| [w, b])
    }

    /// Mutable parameters in declaration order. Invalidates outstanding traces.
    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.id = next_id();
        self.layers
            .iter_mut()
            .filter_map(|l| l.params.as_mut())
            .flat_map(|(w, b)| [w, b])
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().map(Tensor::len).sum()
    }

    /// Copy with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> HostModel<U> {
        HostModel {
            arch: self.arch.clone(),
            input_shape: self.input_shape,
            num_labels: self.num_labels,
            provenance: self.provenance,
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec.clone(),
                    params: l.params.as_ref().map(|(w, b)| (w.cast(), b.cast())),
                })
                .collect(),
            metadata: self.metadata.clone(),
            id: next_id(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_architecture() {
        let layers = vec![
            Layer::<f32>::new(LayerSpec::Flatten, None).unwrap(),
            Layer::zeroed(LayerSpec::dense(48, 5)).unwrap(),
        ];
        assert!(matches!(
            HostModel::new("x", [4, 4, 3], layers, Provenance::Random),
            Err(Error::InvalidArch(_))
        ));
        let layers = vec![Layer::<f32>::zeroed(LayerSpec::dense(48, 10)).unwrap()];
        let err = HostModel::new("x", [4, 4, 3], layers, Provenance::Random).unwrap_err();
        assert!(err.to_string().contains("layer 0 (dense)"), "{err}");
    }

    #[test]
    fn mutation_changes_id() {
        let layers = vec![
            Layer::<f32>::new(LayerSpec::Flatten, None).unwrap(),
            Layer::zeroed(LayerSpec::dense(48, 10)).unwrap(),
        ];
        let mut model = HostModel::new("x", [4, 4, 3], layers, Provenance::Random).unwrap();
        let before = model.id();
        assert_eq!(model.parameters().count(), 2);
        model.parameters_mut().next().unwrap().data_mut()[0] = 1.0;
        assert_ne!(model.id(), before);
        assert_eq!(model.activation_shapes().last().unwrap(), &vec![10]);
    }
}
