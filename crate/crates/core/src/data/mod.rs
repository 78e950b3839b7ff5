//! Datasets, loaders and non-IID partitioning.

mod idx;
mod partition;
mod split;
mod synth;
#[cfg(test)]
mod tests;

pub use idx::{load_idx, parse_idx_images, parse_idx_labels};
pub use partition::{
    partition_dirichlet, partition_pathological, PartitionPlan, PartitionScheme,
};
pub use split::{split_train_test, ClientShards};
pub use synth::synth_clusters;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Labelled samples; `features` is `N×D`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rank() != 2 || features.rows() != labels.len() {
            return Err(Error::Input(format!(
                "features {:?} do not match {} labels",
                features.shape(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Input("dataset is empty".into()));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if !features.is_finite() {
            return Err(Error::Input("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Sample indices grouped by label, each group in ascending order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            out[y].push(i);
        }
        out
    }

    pub fn subset(&self, idx: &[usize]) -> Shard {
        Shard {
            features: self.features.gather_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// A client's local slice of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Shard {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.features.gather_rows(idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}
