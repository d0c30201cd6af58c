//! Datasets, label-skew partitions and the KS heterogeneity statistic.

pub mod cifar;
pub mod ks;
pub mod partition;
pub mod synth;

pub use cifar::{load_cifar10_batch, load_cifar10_dir};
pub use ks::{ks_two, mean_pairwise_ks, LabelDistribution};
pub use partition::{partition_iid, partition_label_skew, ClientIndices, Partition};
pub use synth::synth_dataset;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pixels are mapped to `(x / 255 - PIXEL_MEAN) / PIXEL_STD`.
pub const PIXEL_MEAN: f64 = 0.5;
pub const PIXEL_STD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Images stored as `u8` in `[C, H, W]` order, one after another.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<u8>,
    labels: Vec<usize>,
    shape: [usize; 3],
    num_classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(
        images: Vec<u8>,
        labels: Vec<usize>,
        shape: [usize; 3],
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        let per = shape.iter().product::<usize>();
        if per == 0 || images.len() != per * labels.len() {
            return Err(Error::Dataset(format!(
                "{} image bytes do not hold {} images of shape {:?}",
                images.len(),
                labels.len(),
                shape
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::Dataset(format!(
                "label {l} of sample {i} outside 0..{num_classes}"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            shape,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let per = self.shape.iter().product::<usize>();
        &self.images[i * per..(i + 1) * per]
    }

    /// Normalized `[N, C, H, W]` batch and its labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let per = self.shape.iter().product::<usize>();
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Dataset(format!(
                    "index {i} outside dataset of {} samples",
                    self.len()
                )));
            }
            data.extend(
                self.image(i)
                    .iter()
                    .map(|&b| (b as f64 / 255.0 - PIXEL_MEAN) / PIXEL_STD),
            );
            labels.push(self.labels[i]);
        }
        let [c, h, w] = self.shape;
        Ok((Tensor::new(vec![indices.len(), c, h, w], data)?, labels))
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }

    pub fn class_counts(&self, indices: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &i in indices {
            counts[self.labels[i]] += 1;
        }
        counts
    }

    /// Concatenates datasets with identical geometry and class count.
    pub fn concat(parts: Vec<Dataset>) -> Result<Dataset> {
        let mut iter = parts.into_iter();
        let mut out = iter
            .next()
            .ok_or_else(|| Error::Dataset("nothing to concatenate".into()))?;
        for d in iter {
            if d.shape != out.shape || d.num_classes != out.num_classes {
                return Err(Error::Dataset("cannot concatenate datasets of different geometry".into()));
            }
            out.images.extend(d.images);
            out.labels.extend(d.labels);
        }
        Ok(out)
    }
}
