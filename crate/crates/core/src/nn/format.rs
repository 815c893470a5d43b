//! The `ARPM` model container.
//!
//! ```text
//! "ARPM"            4 bytes
//! version           u32 little-endian
//! descriptor length u32 little-endian
//! descriptor        UTF-8 JSON (architecture, provenance, metadata)
//! weights           f32 little-endian, each layer's weight then bias,
//!                   in layer order
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layer::{Layer, LayerSpec};
use super::model::{HostModel, ModelMetadata, Provenance};
use crate::error::{Error, Result};
use crate::io::{read_file, write_atomic, ByteReader};
use crate::tensor::Tensor;

pub const MODEL_MAGIC: &[u8; 4] = b"ARPM";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Descriptor {
    arch: String,
    input_shape: [usize; 3],
    num_labels: usize,
    provenance: Provenance,
    layers: Vec<LayerSpec>,
    metadata: ModelMetadata,
}

pub fn encode_model(model: &HostModel) -> Result<Vec<u8>> {
    let descriptor = Descriptor {
        arch: model.arch().to_string(),
        input_shape: model.input_shape(),
        num_labels: model.num_labels(),
        provenance: model.provenance(),
        layers: model.specs(),
        metadata: model.metadata.clone(),
    };
    let json = serde_json::to_vec(&descriptor)?;
    let mut out = Vec::with_capacity(12 + json.len() + 4 * model.num_parameters());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for tensor in model.parameters() {
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<HostModel> {
    const WHAT: &str = "model file";
    let mut r = ByteReader::new(bytes, WHAT);
    let magic = r.take(4)?;
    if magic != MODEL_MAGIC {
        return Err(Error::BadMagic {
            what: WHAT,
            expected: u32::from_be_bytes(*MODEL_MAGIC),
            found: u32::from_be_bytes(magic.try_into().unwrap()),
        });
    }
    let version = r.u32_le()?;
    if version != MODEL_VERSION {
        return Err(Error::Version { what: WHAT, version });
    }
    let len = r.u32_le()? as usize;
    let descriptor: Descriptor = serde_json::from_slice(r.take(len)?)?;

    let mut layers = Vec::with_capacity(descriptor.layers.len());
    for spec in descriptor.layers {
        let params = match spec.param_shapes() {
            Some((ws, bs)) => Some((read_tensor(&mut r, ws)?, read_tensor(&mut r, bs)?)),
            None => None,
        };
        layers.push(Layer::new(spec, params)?);
    }
    if r.remaining() != 0 {
        return Err(Error::Format {
            what: WHAT,
            detail: format!("{} trailing bytes", r.remaining()),
        });
    }
    let mut model = HostModel::new(descriptor.arch, descriptor.input_shape, layers, descriptor.provenance)?;
    if model.num_labels() != descriptor.num_labels {
        return Err(Error::Format {
            what: WHAT,
            detail: format!(
                "descriptor says {} labels, layers produce {}",
                descriptor.num_labels,
                model.num_labels()
            ),
        });
    }
    model.metadata = descriptor.metadata;
    Ok(model)
}

fn read_tensor(r: &mut ByteReader, shape: Vec<usize>) -> Result<Tensor> {
    let len = shape.iter().product();
    let data = r.f32_le_vec(len)?;
    Tensor::new(shape, data)
}

pub fn save_model(model: &HostModel, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_model(model)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<HostModel> {
    decode_model(&read_file(path.as_ref())?)
}
