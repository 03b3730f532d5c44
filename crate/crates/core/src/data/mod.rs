//! Datasets split across clients.

mod mnist;
mod partition;
mod synthetic;

use serde::Serialize;

pub use mnist::{
    default_mnist_dir, load_mnist_federated, load_mnist_idx, read_idx_images, read_idx_labels,
    IdxData, MnistSpec, MNIST_FILES,
};
pub use partition::{partition, Balance, PartitionMode, PartitionPlan};
pub use synthetic::{generate_synthetic, synthetic_label_models, LabelModel, SyntheticConfig};

use crate::error::{Error, Result};
use crate::models::BatchRef;

/// Where a dataset came from, serialized into run outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub source: String,
    pub seed: u64,
    pub plan: serde_json::Value,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub digests: Vec<FileDigest>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileDigest {
    pub file: String,
    pub sha256: String,
}

/// Train and test samples plus the per-client split of the train set.
///
/// Inputs are row-major `n x input_dim` matrices.
#[derive(Debug, Clone)]
pub struct FederatedDataset {
    pub input_dim: usize,
    pub num_classes: usize,
    pub train_inputs: Vec<f64>,
    pub train_labels: Vec<usize>,
    pub test_inputs: Vec<f64>,
    pub test_labels: Vec<usize>,
    /// Train-set indices owned by each client.
    pub partitions: Vec<Vec<usize>>,
    pub meta: Provenance,
}

impl FederatedDataset {
    pub fn n_clients(&self) -> usize {
        self.partitions.len()
    }

    pub fn n_train(&self) -> usize {
        self.train_labels.len()
    }

    pub fn client_size(&self, client: usize) -> usize {
        self.partitions[client].len()
    }

    pub fn train_view(&self) -> Result<BatchRef<'_>> {
        BatchRef::new(&self.train_inputs, &self.train_labels, self.input_dim)
    }

    pub fn test_view(&self) -> Result<BatchRef<'_>> {
        BatchRef::new(&self.test_inputs, &self.test_labels, self.input_dim)
    }

    /// Union of all client partitions, in client order.
    pub fn pooled_indices(&self) -> Vec<usize> {
        self.partitions.iter().flatten().copied().collect()
    }

    /// Checks shapes and that partitions are nonempty and pairwise disjoint.
    pub fn validate(&self) -> Result<()> {
        let n = self.train_labels.len();
        if self.train_inputs.len() != n * self.input_dim
            || self.test_inputs.len() != self.test_labels.len() * self.input_dim
        {
            return Err(Error::Consistency("input matrix shape does not match labels".into()));
        }
        if self
            .train_labels
            .iter()
            .chain(&self.test_labels)
            .any(|&y| y >= self.num_classes)
        {
            return Err(Error::Consistency("label out of range".into()));
        }
        let mut seen = vec![false; n];
        for (c, part) in self.partitions.iter().enumerate() {
            if part.is_empty() {
                return Err(Error::Partition(format!("client {c} has no samples")));
            }
            for &i in part {
                if i >= n || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Partition(format!(
                        "client {c}: index {i} is out of range or assigned twice"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Per-client label histograms.
    pub fn label_counts(&self) -> Vec<Vec<usize>> {
        self.partitions
            .iter()
            .map(|part| {
                let mut counts = vec![0; self.num_classes];
                part.iter().for_each(|&i| counts[self.train_labels[i]] += 1);
                counts
            })
            .collect()
    }
}

/// Shannon entropy (nats) of a histogram.
pub fn label_entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_of_uniform_and_point_mass() {
        assert!((label_entropy(&[5, 5, 5, 5]) - 4f64.ln()).abs() < 1e-15);
        assert_eq!(label_entropy(&[0, 9, 0]), 0.0);
        assert_eq!(label_entropy(&[]), 0.0);
    }
}
