//! Model container: JSON header followed by little-endian f64 parameter
//! blocks (weights then bias, layer by layer, in declaration order).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, Model};
use crate::container;
use crate::error::Result;

pub const MODEL_MAGIC: &str = "XTM1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub magic: String,
    pub architecture_id: String,
    pub architecture: Architecture,
    pub seed: u64,
    /// Free-form training provenance (config, fold, accuracies...).
    #[serde(default)]
    pub provenance: serde_json::Value,
    /// Number of f64 values in each parameter block, in payload order.
    pub blocks: Vec<usize>,
}

pub fn encode_model(model: &Model, provenance: serde_json::Value) -> Result<Vec<u8>> {
    let blocks: Vec<usize> = model.params().iter().flatten().map(Vec::len).collect();
    let header = ModelHeader {
        magic: MODEL_MAGIC.into(),
        architecture_id: model.architecture().id.clone(),
        architecture: model.architecture().clone(),
        seed: model.seed(),
        provenance,
        blocks,
    };
    let payload = container::f64s_to_le(model.params().iter().flatten().flatten().copied());
    container::encode(&header, &payload)
}

pub fn decode_model(bytes: &[u8]) -> Result<(Model, ModelHeader)> {
    let (header, payload, offset) = container::decode::<ModelHeader>(bytes)?;
    container::check_magic(&header.magic, MODEL_MAGIC, 8)?;
    let total: usize = header.blocks.iter().sum();
    let values = container::le_to_f64s(payload, total, offset)?;
    let mut cursor = values.into_iter();
    let mut blocks = header.blocks.iter();
    let params = header
        .architecture
        .layers
        .iter()
        .map(|layer| {
            layer
                .param_shapes()
                .iter()
                .map(|_| {
                    let n = blocks.next().copied().unwrap_or(0);
                    cursor.by_ref().take(n).collect::<Vec<f64>>()
                })
                .collect()
        })
        .collect();
    let model = Model::from_params(header.architecture.clone(), params, header.seed)?;
    Ok((model, header))
}

pub fn save_model(model: &Model, provenance: serde_json::Value, path: &Path) -> Result<()> {
    container::write_file(path, &encode_model(model, provenance)?)
}

pub fn load_model(path: &Path) -> Result<(Model, ModelHeader)> {
    decode_model(&container::read_file(path)?)
}
