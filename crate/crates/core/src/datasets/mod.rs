//! Labeled image datasets: the in-memory type, a procedural glyph
//! generator, an IDX reader and the internal container format.

mod idx;
mod shapes;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use idx::{load_idx, parse_idx_images, parse_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use shapes::{gen_shapes, GLYPHS};

/// `N x C x H x W` images in `[0, 1]` with aligned labels and ids.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Tensor,
    labels: Vec<usize>,
    sample_ids: Vec<String>,
    classes: usize,
}

impl LabeledDataset {
    pub fn new(
        images: Tensor,
        labels: Vec<usize>,
        sample_ids: Vec<String>,
        classes: usize,
    ) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::Shape(format!(
                "dataset images must be N x C x H x W, got {:?}",
                images.shape()
            )));
        }
        let n = images.shape()[0];
        if labels.len() != n || sample_ids.len() != n {
            return Err(Error::Shape(format!(
                "{n} images, {} labels, {} ids",
                labels.len(),
                sample_ids.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        if let Some(v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(LabeledDataset {
            images,
            labels,
            sample_ids,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    /// Shape of one sample, `[C, H, W]`.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn image(&self, index: usize) -> Tensor {
        self.images.slice_outer(index)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let sample = self.sample_shape();
        let inner: usize = sample.iter().product();
        let mut data = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * inner..(i + 1) * inner]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&sample);
        LabeledDataset {
            images: Tensor::new(shape, data).expect("consistent subset shape"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            sample_ids: indices.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            classes: self.classes,
        }
    }

    pub fn with_labels(&self, labels: Vec<usize>) -> Result<LabeledDataset> {
        LabeledDataset::new(
            self.images.clone(),
            labels,
            self.sample_ids.clone(),
            self.classes,
        )
    }

    /// Seeded per-class shuffles, returned as one index list per class.
    pub(crate) fn shuffled_class_indices(&self, seed: u64) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_class = vec![Vec::new(); self.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        for list in &mut by_class {
            list.shuffle(&mut rng);
        }
        by_class
    }

    /// Seeded stratified split: roughly `train_fraction` of every class goes
    /// to the first dataset, the rest to the second. Index order is kept.
    pub fn split_stratified(&self, train_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::InvalidArgument(format!(
                "train fraction {train_fraction} outside [0, 1]"
            )));
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for list in self.shuffled_class_indices(seed) {
            let cut = (train_fraction * list.len() as f64).round() as usize;
            train.extend_from_slice(&list[..cut]);
            test.extend_from_slice(&list[cut..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train), self.subset(&test)))
    }
}

pub const DATASET_MAGIC: &str = "XDS1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetHeader {
    magic: String,
    shape: Vec<usize>,
    classes: usize,
    labels: Vec<usize>,
    sample_ids: Vec<String>,
    #[serde(default)]
    provenance: serde_json::Value,
}

pub fn encode_dataset(data: &LabeledDataset, provenance: serde_json::Value) -> Result<Vec<u8>> {
    let header = DatasetHeader {
        magic: DATASET_MAGIC.into(),
        shape: data.images.shape().to_vec(),
        classes: data.classes,
        labels: data.labels.clone(),
        sample_ids: data.sample_ids.clone(),
        provenance,
    };
    container::encode(&header, &container::f64s_to_le(data.images.data().iter().copied()))
}

pub fn decode_dataset(bytes: &[u8]) -> Result<LabeledDataset> {
    let (header, payload, offset) = container::decode::<DatasetHeader>(bytes)?;
    container::check_magic(&header.magic, DATASET_MAGIC, 8)?;
    let n: usize = header.shape.iter().product();
    let values = container::le_to_f64s(payload, n, offset)?;
    LabeledDataset::new(
        Tensor::new(header.shape, values)?,
        header.labels,
        header.sample_ids,
        header.classes,
    )
}

pub fn save_dataset(data: &LabeledDataset, provenance: serde_json::Value, path: &Path) -> Result<()> {
    container::write_file(path, &encode_dataset(data, provenance)?)
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    decode_dataset(&container::read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stratified_split_is_80_20_per_class() {
        let ds = gen_shapes(400, 8, 4, 3).unwrap();
        let (train, test) = ds.split_stratified(0.8, 1).unwrap();
        assert_eq!(train.class_counts(), vec![80; 4]);
        assert_eq!(test.class_counts(), vec![20; 4]);
    }

    #[test]
    fn rejects_out_of_range_pixels() {
        let images = Tensor::new(vec![1, 1, 1, 2], vec![0.5, 1.5]).unwrap();
        assert!(LabeledDataset::new(images, vec![0], vec!["a".into()], 2).is_err());
    }

    #[test]
    fn container_round_trip() {
        let ds = gen_shapes(40, 8, 4, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.xds");
        save_dataset(&ds, serde_json::json!({"source": "shapes"}), &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);
        let mut bytes = encode_dataset(&ds, serde_json::Value::Null).unwrap();
        bytes.truncate(bytes.len() - 8);
        assert!(decode_dataset(&bytes).is_err());
    }

    #[test]
    fn subset_and_relabel() {
        let ds = gen_shapes(20, 8, 2, 0).unwrap();
        let sub = ds.subset(&[3, 1]);
        assert_eq!(sub.sample_ids(), &[ds.sample_ids()[3].clone(), ds.sample_ids()[1].clone()]);
        assert_eq!(sub.image(0), ds.image(3));
        assert!(ds.with_labels(vec![2; 20]).is_err());
    }
}
