//! Reader for the big-endian IDX files used by MNIST and Fashion-MNIST.

use std::path::Path;

use super::LabeledDataset;
use crate::container::read_file;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Unsigned-byte, 3-dimensional (images).
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// Unsigned-byte, 1-dimensional (labels).
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::format(offset as u64, "truncated IDX header"))
}

fn check_idx_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = be_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::format(
            0,
            format!("bad IDX magic 0x{magic:08x}, expected 0x{expected:08x}"),
        ));
    }
    Ok(())
}

/// Parses an image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    check_idx_magic(bytes, IDX_IMAGES_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let need = count * rows * cols;
    let pixels = &bytes[16..];
    if pixels.len() < need {
        return Err(Error::format(
            16 + pixels.len() as u64,
            format!("truncated IDX image data: need {need} bytes, found {}", pixels.len()),
        ));
    }
    Ok((count, rows, cols, &pixels[..need]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    check_idx_magic(bytes, IDX_LABELS_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let labels = &bytes[8..];
    if labels.len() < count {
        return Err(Error::format(
            8 + labels.len() as u64,
            format!("truncated IDX label data: need {count} bytes, found {}", labels.len()),
        ));
    }
    Ok(&labels[..count])
}

/// Loads at most `limit` samples; pixels are scaled to `[0, 1]`. The class
/// count is taken from the largest label in the whole label file.
pub fn load_idx(images_path: &Path, labels_path: &Path, limit: usize) -> Result<LabeledDataset> {
    let image_bytes = read_file(images_path)?;
    let label_bytes = read_file(labels_path)?;
    let (count, rows, cols, pixels) = parse_idx_images(&image_bytes)?;
    let labels = parse_idx_labels(&label_bytes)?;
    if labels.len() != count {
        return Err(Error::format(
            4,
            format!(
                "{} holds {count} images but {} holds {} labels",
                images_path.display(),
                labels_path.display(),
                labels.len()
            ),
        ));
    }
    let classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let n = count.min(limit);
    let plane = rows * cols;
    let data = pixels[..n * plane].iter().map(|&p| p as f64 / 255.0).collect();
    let images = Tensor::new(vec![n, 1, rows, cols], data)?;
    let stem = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    let ids = (0..n).map(|i| format!("{stem}-{i:06}")).collect();
    LabeledDataset::new(
        images,
        labels[..n].iter().map(|&l| l as usize).collect(),
        ids,
        classes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut out = magic.to_be_bytes().to_vec();
        for d in dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out
    }

    #[test]
    fn parses_images_and_labels() {
        let mut bytes = header(IDX_IMAGES_MAGIC, &[2, 2, 3]);
        bytes.extend(0u8..12);
        let (n, r, c, px) = parse_idx_images(&bytes).unwrap();
        assert_eq!((n, r, c), (2, 2, 3));
        assert_eq!(px, (0u8..12).collect::<Vec<_>>().as_slice());
        let mut labels = header(IDX_LABELS_MAGIC, &[2]);
        labels.extend([4, 9]);
        assert_eq!(parse_idx_labels(&labels).unwrap(), &[4, 9]);
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let bytes = header(0x0000_0802, &[1, 1, 1]);
        match parse_idx_images(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_is_rejected() {
        let mut bytes = header(IDX_IMAGES_MAGIC, &[2, 2, 2]);
        bytes.extend([0u8; 7]);
        assert!(parse_idx_images(&bytes).is_err());
        assert!(parse_idx_labels(&IDX_LABELS_MAGIC.to_be_bytes()).is_err());
    }

    #[test]
    fn limit_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let mut images = header(IDX_IMAGES_MAGIC, &[3, 1, 2]);
        images.extend([0, 255, 51, 102, 1, 2]);
        let mut labels = header(IDX_LABELS_MAGIC, &[3]);
        labels.extend([0, 1, 5]);
        let (ip, lp) = (dir.path().join("img.idx"), dir.path().join("lbl.idx"));
        std::fs::write(&ip, images).unwrap();
        std::fs::write(&lp, labels).unwrap();
        let ds = load_idx(&ip, &lp, 2).unwrap();
        assert_eq!(ds.images().shape(), &[2, 1, 1, 2]);
        assert_eq!(ds.images().data(), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(ds.classes(), 6);
        let empty = load_idx(&ip, &lp, 0).unwrap();
        assert!(empty.is_empty());
    }
}
