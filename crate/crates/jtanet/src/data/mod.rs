//! Patch datasets: in-memory records, batching, the on-disk patch container,
//! synthetic texture data for fast experiments, and ingestion of nuclei
//! patches from annotated source images.

mod container;
mod rcc;
mod resize;
mod synth;

pub use container::{load_patches, save_patches};
pub use rcc::{ingest_rcc, IngestReport, RCC_CLASS_NAMES, RCC_PUBLISHED_COUNTS};
pub use resize::resize_bilinear;
pub use synth::synth_dataset;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One image patch: pixels in channel-major (3, side, side) order scaled to
/// [-1, 1], its class label, and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchRecord {
    pub pixels: Vec<f32>,
    pub label: u32,
    pub source_image: u32,
    pub center: (u32, u32),
}

/// A train/test split of patches with shared class names and patch side.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<PatchRecord>,
    pub test: Vec<PatchRecord>,
    pub class_names: Vec<String>,
    pub side: usize,
    pub split_seed: u64,
}

impl DatasetSplit {
    pub fn validate(&self) -> Result<()> {
        let n_classes = self.class_names.len() as u32;
        let expect = 3 * self.side * self.side;
        for (what, records) in [("train", &self.train), ("test", &self.test)] {
            for (i, r) in records.iter().enumerate() {
                if r.pixels.len() != expect {
                    return Err(Error::shape(format!(
                        "{what} record {i} has {} pixel values, expected {expect}",
                        r.pixels.len()
                    )));
                }
                if r.label >= n_classes {
                    return Err(Error::invalid(format!(
                        "{what} record {i} has label {} but only {n_classes} classes",
                        r.label
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A batch of patches as one `(B, 3, side, side)` tensor plus labels.
#[derive(Debug, Clone)]
pub struct PatchBatch {
    pub images: Tensor,
    pub labels: Vec<u32>,
}

impl PatchBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Assembles the selected records into a batch, widening pixels to f64.
pub fn make_batch(records: &[PatchRecord], indices: &[usize], side: usize) -> Result<PatchBatch> {
    if indices.is_empty() {
        return Err(Error::invalid("cannot build an empty batch".to_string()));
    }
    let per = 3 * side * side;
    let mut data = Vec::with_capacity(indices.len() * per);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let r = records.get(i).ok_or_else(|| {
            Error::invalid(format!("batch index {i} out of range ({} records)", records.len()))
        })?;
        if r.pixels.len() != per {
            return Err(Error::shape(format!(
                "record {i} has {} pixel values, expected {per}",
                r.pixels.len()
            )));
        }
        data.extend(r.pixels.iter().map(|&v| v as f64));
        labels.push(r.label);
    }
    let images = Tensor::from_vec(&[indices.len(), 3, side, side], data)?;
    Ok(PatchBatch { images, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(side: usize, label: u32, fill: f32) -> PatchRecord {
        PatchRecord {
            pixels: vec![fill; 3 * side * side],
            label,
            source_image: 0,
            center: (0, 0),
        }
    }

    #[test]
    fn make_batch_stacks_in_index_order() {
        let records = vec![record(2, 0, 0.1), record(2, 1, 0.2), record(2, 0, 0.3)];
        let b = make_batch(&records, &[2, 0], 2).unwrap();
        assert_eq!(b.images.shape(), &[2, 3, 2, 2]);
        assert_eq!(b.labels, vec![0, 0]);
        assert!((b.images.data()[0] - 0.3).abs() < 1e-7);
        assert!((b.images.data()[12] - 0.1).abs() < 1e-7);
    }

    #[test]
    fn make_batch_rejects_bad_indices() {
        let records = vec![record(2, 0, 0.0)];
        assert!(make_batch(&records, &[1], 2).is_err());
        assert!(make_batch(&records, &[], 2).is_err());
    }

    #[test]
    fn validate_checks_labels_and_sizes() {
        let mut split = DatasetSplit {
            train: vec![record(2, 0, 0.0)],
            test: vec![],
            class_names: vec!["a".into()],
            side: 2,
            split_seed: 0,
        };
        assert!(split.validate().is_ok());
        split.train[0].label = 1;
        assert!(split.validate().is_err());
    }
}
