//! Synthetic multinomial-logistic federated data.
//!
//! Each client owns a linear label model `(theta_i, b_i)` and an input mean
//! shift. `gamma1` controls how far label models drift apart across clients,
//! `gamma2` how far input distributions drift apart.

use serde::{Deserialize, Serialize};

use super::{FederatedDataset, Provenance};
use crate::error::{Error, Result};
use crate::math::{Purpose, RngStream, StreamRng};

// Sub-streams per client, packed into the round field of the stream key.
const MODEL: usize = 0;
const SHIFT: usize = 1;
const TRAIN: usize = 2;
const TEST: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub gamma1: f64,
    pub gamma2: f64,
    #[serde(default = "default_clients")]
    pub n_clients: usize,
    #[serde(default = "default_samples")]
    pub samples_per_client: usize,
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    /// Test samples per client as a fraction of the train samples.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_clients() -> usize {
    20
}
fn default_samples() -> usize {
    200
}
fn default_input_dim() -> usize {
    30
}
fn default_classes() -> usize {
    5
}
fn default_test_fraction() -> f64 {
    0.2
}

impl SyntheticConfig {
    pub fn new(gamma1: f64, gamma2: f64, seed: u64) -> Self {
        SyntheticConfig {
            gamma1,
            gamma2,
            n_clients: default_clients(),
            samples_per_client: default_samples(),
            input_dim: default_input_dim(),
            num_classes: default_classes(),
            test_fraction: default_test_fraction(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_clients < 1 {
            return Err(Error::Parameter("synthetic data needs at least one client".into()));
        }
        if self.samples_per_client < 1 || self.input_dim < 1 || self.num_classes < 2 {
            return Err(Error::Parameter(
                "synthetic data needs >= 1 sample, >= 1 input dim and >= 2 classes".into(),
            ));
        }
        for (name, g) in [("gamma1", self.gamma1), ("gamma2", self.gamma2)] {
            if !(g >= 0.0) || !g.is_finite() {
                return Err(Error::Parameter(format!("{name} must be finite and >= 0, got {g}")));
            }
        }
        if !(self.test_fraction >= 0.0) || !self.test_fraction.is_finite() {
            return Err(Error::Parameter("test_fraction must be finite and >= 0".into()));
        }
        Ok(())
    }

    fn test_per_client(&self) -> usize {
        (self.samples_per_client as f64 * self.test_fraction).round() as usize
    }
}

/// A client's label rule: `y = argmax(weights x + bias)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelModel {
    /// `num_classes x input_dim`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LabelModel {
    fn draw(rng: &mut StreamRng, mean: f64, classes: usize, dim: usize) -> Self {
        let mut normal = || mean + rng.gaussian();
        let weights = (0..classes * dim).map(|_| normal()).collect();
        let bias = (0..classes).map(|_| normal()).collect();
        LabelModel { weights, bias }
    }

    pub fn label(&self, x: &[f64]) -> usize {
        let dim = x.len();
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (c, b) in self.bias.iter().enumerate() {
            let row = &self.weights[c * dim..(c + 1) * dim];
            let score = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            if score > best_score {
                best = c;
                best_score = score;
            }
        }
        best
    }
}

/// Per-client label models. With `gamma1 == 0` every client shares one draw.
pub fn synthetic_label_models(cfg: &SyntheticConfig) -> Result<Vec<LabelModel>> {
    cfg.validate()?;
    let stream = |client| RngStream::keyed(cfg.seed, Purpose::Synthetic, client, MODEL).open();
    if cfg.gamma1 == 0.0 {
        let shared = LabelModel::draw(&mut stream(0), 0.0, cfg.num_classes, cfg.input_dim);
        return Ok(vec![shared; cfg.n_clients]);
    }
    (0..cfg.n_clients)
        .map(|i| {
            let mut rng = stream(i);
            let mu = rng.normal(0.0, cfg.gamma1)?;
            Ok(LabelModel::draw(&mut rng, mu, cfg.num_classes, cfg.input_dim))
        })
        .collect()
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<FederatedDataset> {
    let models = synthetic_label_models(cfg)?;
    let (dim, n, n_test) = (cfg.input_dim, cfg.samples_per_client, cfg.test_per_client());

    let mut train_inputs = Vec::with_capacity(cfg.n_clients * n * dim);
    let mut train_labels = Vec::with_capacity(cfg.n_clients * n);
    let mut test_inputs = Vec::with_capacity(cfg.n_clients * n_test * dim);
    let mut test_labels = Vec::with_capacity(cfg.n_clients * n_test);
    let mut partitions = Vec::with_capacity(cfg.n_clients);

    for (i, model) in models.iter().enumerate() {
        let key = |sub| RngStream::keyed(cfg.seed, Purpose::Synthetic, i, sub).open();
        let mut rng = key(SHIFT);
        let shift = (0..dim)
            .map(|_| rng.normal(0.0, cfg.gamma2))
            .collect::<Result<Vec<f64>>>()?;

        let start = train_labels.len();
        draw_samples(&mut key(TRAIN), model, &shift, n, &mut train_inputs, &mut train_labels);
        partitions.push((start..start + n).collect());
        draw_samples(&mut key(TEST), model, &shift, n_test, &mut test_inputs, &mut test_labels);
    }

    let dataset = FederatedDataset {
        input_dim: dim,
        num_classes: cfg.num_classes,
        train_inputs,
        train_labels,
        test_inputs,
        test_labels,
        partitions,
        meta: Provenance {
            source: "synthetic".into(),
            seed: cfg.seed,
            plan: serde_json::to_value(cfg).expect("config serializes"),
            digests: Vec::new(),
        },
    };
    dataset.validate()?;
    Ok(dataset)
}

fn draw_samples(
    rng: &mut StreamRng,
    model: &LabelModel,
    shift: &[f64],
    count: usize,
    inputs: &mut Vec<f64>,
    labels: &mut Vec<usize>,
) {
    for _ in 0..count {
        let start = inputs.len();
        inputs.extend(shift.iter().map(|m| m + rng.gaussian()));
        labels.push(model.label(&inputs[start..]));
    }
}
