//! Explanation archives: one model's maps for a list of samples, stored
//! as little-endian f32 behind the shared JSON-header framing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attribution::{ExplanationMap, Method};
use crate::container;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ARCHIVE_MAGIC: &str = "XTA1";
pub const ARCHIVE_DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub magic: String,
    pub dtype: String,
    pub map_shape: Vec<usize>,
    pub method: Method,
    pub model_id: String,
    pub sample_ids: Vec<String>,
    pub predicted_classes: Vec<usize>,
    /// Seconds since the Unix epoch.
    pub created: u64,
    pub seed: u64,
}

/// Explanation maps of one model, stored as 32-bit floats in sample order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationArchive {
    pub header: ArchiveHeader,
    pub payload: Vec<f32>,
}

/// `SOURCE_DATE_EPOCH` when set, for reproducible archives.
pub fn creation_time() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs())
        })
}

impl ExplanationArchive {
    pub fn from_maps(
        method: Method,
        model_id: &str,
        map_shape: &[usize],
        maps: &[ExplanationMap],
        seed: u64,
    ) -> Result<Self> {
        let mut payload = Vec::with_capacity(maps.len() * map_shape.iter().product::<usize>());
        for m in maps {
            if m.values.shape() != map_shape {
                return Err(Error::Shape(format!(
                    "map for {} has shape {:?}, archive expects {map_shape:?}",
                    m.sample_id,
                    m.values.shape()
                )));
            }
            payload.extend(m.values.data().iter().map(|&v| v as f32));
        }
        Ok(ExplanationArchive {
            header: ArchiveHeader {
                magic: ARCHIVE_MAGIC.into(),
                dtype: ARCHIVE_DTYPE.into(),
                map_shape: map_shape.to_vec(),
                method,
                model_id: model_id.into(),
                sample_ids: maps.iter().map(|m| m.sample_id.clone()).collect(),
                predicted_classes: maps.iter().map(|m| m.predicted_class).collect(),
                created: creation_time(),
                seed,
            },
            payload,
        })
    }

    pub fn to_maps(&self) -> Result<Vec<ExplanationMap>> {
        let size: usize = self.header.map_shape.iter().product();
        self.header
            .sample_ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let values = self.payload[i * size..(i + 1) * size].iter().map(|&v| v as f64).collect();
                Ok(ExplanationMap {
                    values: Tensor::new(self.header.map_shape.clone(), values)?,
                    method: self.header.method,
                    model_id: self.header.model_id.clone(),
                    sample_id: id.clone(),
                    predicted_class: self.header.predicted_classes[i],
                })
            })
            .collect()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let bytes: Vec<u8> = self.payload.iter().flat_map(|v| v.to_le_bytes()).collect();
        container::encode(&self.header, &bytes)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (header, payload, offset) = container::decode::<ArchiveHeader>(bytes)?;
        container::check_magic(&header.magic, ARCHIVE_MAGIC, 8)?;
        if header.dtype != ARCHIVE_DTYPE {
            return Err(Error::format(8, format!("unsupported dtype {:?}", header.dtype)));
        }
        if header.predicted_classes.len() != header.sample_ids.len() {
            return Err(Error::format(8, "predicted_classes and sample_ids differ in length"));
        }
        let expected = header.sample_ids.len() * header.map_shape.iter().product::<usize>() * 4;
        if payload.len() != expected {
            return Err(Error::format(
                offset,
                format!("payload length mismatch: expected {expected} bytes, found {}", payload.len()),
            ));
        }
        let payload = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(ExplanationArchive { header, payload })
    }
}

pub fn write_archive(archive: &ExplanationArchive, path: &Path) -> Result<()> {
    container::write_file(path, &archive.encode()?)
}

pub fn read_archive(path: &Path) -> Result<ExplanationArchive> {
    ExplanationArchive::decode(&container::read_file(path)?).map_err(|e| match e {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}
