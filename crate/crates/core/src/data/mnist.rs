//! MNIST in the IDX binary format.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{partition, FederatedDataset, FileDigest, PartitionPlan, Provenance};
use crate::error::{Error, Result};
use crate::math::{Purpose, RngStream};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// File names of the official distribution: train images, train labels,
/// test images, test labels.
pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Images scaled to `[0, 1]` plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxData {
    pub rows: usize,
    pub cols: usize,
    /// `n x (rows * cols)`, row-major.
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
}

impl IdxData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.rows * self.cols
    }

    /// IDX image file bytes. Exact inverse of [`read_idx_images`].
    pub fn image_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.inputs.len());
        for v in [IMAGE_MAGIC, self.len() as u32, self.rows as u32, self.cols as u32] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend(self.inputs.iter().map(|&x| (x * 255.0).round() as u8));
        out
    }

    /// IDX label file bytes. Exact inverse of [`read_idx_labels`].
    pub fn label_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.len());
        out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        out.extend_from_slice(&(self.len() as u32).to_be_bytes());
        out.extend(self.labels.iter().map(|&y| y as u8));
        out
    }

    /// The rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> IdxData {
        let dim = self.input_dim();
        IdxData {
            rows: self.rows,
            cols: self.cols,
            inputs: indices
                .iter()
                .flat_map(|&i| &self.inputs[i * dim..(i + 1) * dim])
                .copied()
                .collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

fn header(bytes: &[u8], path: &Path, magic: u32, words: usize) -> Result<Vec<usize>> {
    if bytes.len() < 4 * words {
        return Err(Error::Length {
            path: path.into(),
            msg: format!("header needs {} bytes, file has {}", 4 * words, bytes.len()),
        });
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    if word(0) != magic {
        return Err(Error::Format {
            path: path.into(),
            msg: format!("magic {:#010x}, expected {magic:#010x}", word(0)),
        });
    }
    Ok((1..words).map(|i| word(i) as usize).collect())
}

fn body<'a>(bytes: &'a [u8], path: &Path, offset: usize, len: usize) -> Result<&'a [u8]> {
    let found = bytes.len() - offset;
    match found.cmp(&len) {
        std::cmp::Ordering::Less => Err(Error::Length {
            path: path.into(),
            msg: format!("expected {len} payload bytes, found {found}"),
        }),
        std::cmp::Ordering::Greater => Err(Error::Format {
            path: path.into(),
            msg: format!("{} trailing bytes after payload", found - len),
        }),
        std::cmp::Ordering::Equal => Ok(&bytes[offset..]),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Returns `(count, rows, cols, pixels scaled by 1/255)`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    let bytes = read(path)?;
    let dims = header(&bytes, path, IMAGE_MAGIC, 4)?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    let pixels = body(&bytes, path, 16, n * rows * cols)?;
    Ok((n, rows, cols, pixels.iter().map(|&b| f64::from(b) / 255.0).collect()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = read(path)?;
    let n = header(&bytes, path, LABEL_MAGIC, 2)?[0];
    Ok(body(&bytes, path, 8, n)?.iter().map(|&b| b as usize).collect())
}

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<IdxData> {
    let (n, rows, cols, inputs) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != n {
        return Err(Error::Consistency(format!(
            "{} has {n} images but {} has {} labels",
            images_path.display(),
            labels_path.display(),
            labels.len()
        )));
    }
    Ok(IdxData {
        rows,
        cols,
        inputs,
        labels,
    })
}

/// `$FEDDRIFT_DATA_DIR` if set, else the first `data/mnist` found walking up
/// from the working directory or from this crate's source tree.
pub fn default_mnist_dir() -> Option<PathBuf> {
    if let Some(dir) = std::env::var_os("FEDDRIFT_DATA_DIR") {
        return Some(PathBuf::from(dir));
    }
    let roots = [
        std::env::current_dir().ok(),
        Some(PathBuf::from(env!("CARGO_MANIFEST_DIR"))),
    ];
    roots.into_iter().flatten().find_map(|root| {
        root.ancestors()
            .map(|a| a.join("data").join("mnist"))
            .find(|d| d.join(MNIST_FILES[0]).is_file())
    })
}

/// Federated MNIST construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnistSpec {
    pub dir: PathBuf,
    pub n_clients: usize,
    pub plan: PartitionPlan,
    /// Keep this fraction of the train set (uniformly drawn) before
    /// partitioning.
    #[serde(default = "one")]
    pub train_fraction: f64,
    #[serde(default = "one")]
    pub test_fraction: f64,
}

fn one() -> f64 {
    1.0
}

impl MnistSpec {
    pub fn new(dir: impl Into<PathBuf>, n_clients: usize, plan: PartitionPlan) -> Self {
        MnistSpec {
            dir: dir.into(),
            n_clients,
            plan,
            train_fraction: 1.0,
            test_fraction: 1.0,
        }
    }
}

fn subsample(data: IdxData, fraction: f64, seed: u64, which: usize) -> Result<IdxData> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Parameter(format!("sample fraction must be in (0, 1], got {fraction}")));
    }
    if fraction == 1.0 {
        return Ok(data);
    }
    let k = ((data.len() as f64 * fraction).round() as usize).max(1);
    let mut idx = RngStream::keyed(seed, Purpose::Subsample, 0, which)
        .open()
        .choose(data.len(), k);
    idx.sort_unstable();
    Ok(data.select(&idx))
}

fn digest(path: &Path) -> Result<FileDigest> {
    let bytes = read(path)?;
    Ok(FileDigest {
        file: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        sha256: format!("{:x}", Sha256::digest(&bytes)),
    })
}

pub fn load_mnist_federated(spec: &MnistSpec) -> Result<FederatedDataset> {
    let path = |i: usize| spec.dir.join(MNIST_FILES[i]);
    let train = load_mnist_idx(&path(0), &path(1))?;
    let test = load_mnist_idx(&path(2), &path(3))?;
    if train.input_dim() != test.input_dim() {
        return Err(Error::Consistency("train and test image sizes differ".into()));
    }
    let seed = spec.plan.seed;
    let train = subsample(train, spec.train_fraction, seed, 0)?;
    let test = subsample(test, spec.test_fraction, seed, 1)?;
    let partitions = partition(&train.labels, 10, spec.n_clients, &spec.plan)?;

    let dataset = FederatedDataset {
        input_dim: train.input_dim(),
        num_classes: 10,
        train_inputs: train.inputs,
        train_labels: train.labels,
        test_inputs: test.inputs,
        test_labels: test.labels,
        partitions,
        meta: Provenance {
            source: "mnist".into(),
            seed,
            plan: serde_json::json!({
                "n_clients": spec.n_clients,
                "partition": spec.plan,
                "train_fraction": spec.train_fraction,
                "test_fraction": spec.test_fraction,
            }),
            digests: (0..4).map(|i| digest(&path(i))).collect::<Result<_>>()?,
        },
    };
    dataset.validate()?;
    Ok(dataset)
}
