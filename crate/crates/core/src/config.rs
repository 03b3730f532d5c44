//! Experiment configuration: a partial, mergeable file schema, built-in
//! presets, and resolution into a fully specified [`ExperimentConfig`].

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{
    default_mnist_dir, generate_synthetic, load_mnist_federated, Balance, FederatedDataset,
    MnistSpec, PartitionMode, PartitionPlan, SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::federation::{Ablation, AlgoConfig, Algorithm, Correction, Weighting};
use crate::models::{Activation, ModelKind, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Synthetic,
    Mnist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgoName {
    FedAvg,
    FedProx,
    Scaffold,
    FedDyn,
    #[serde(rename = "feddc")]
    FedDc,
}

impl std::str::FromStr for AlgoName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
            .map_err(|_| Error::Parameter(format!("unknown algorithm `{s}`")))
    }
}

/// Overwrites each `Some` field of `$base` with the one from `$over`.
macro_rules! overlay {
    ($base:ident, $over:ident; $($field:ident),* $(,)?) => {
        $( if $over.$field.is_some() { $base.$field = $over.$field; } )*
    };
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<DatasetKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_clients: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_fraction: Option<f64>,
    // Synthetic only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples_per_client: Option<usize>,
    // MNIST only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub balance: Option<Balance>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<ModelKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<AlgoName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ablation: Option<Ablation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correction: Option<Correction>,
}

impl AlgorithmFile {
    pub fn named(name: AlgoName) -> Self {
        AlgorithmFile {
            name: Some(name),
            ..Default::default()
        }
    }
}

/// On-disk experiment description. Every field is optional; omitted fields
/// take dataset-dependent defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    /// Label for the data setting in outputs, e.g. `mnist-iid`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub setting: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<AlgorithmFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub participation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregation: Option<Weighting>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Record wall-clock time per round. Off by default so outputs are
    /// byte-stable across reruns.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ConfigFile {
    /// `over` wins wherever it sets a field; nested sections merge field by
    /// field.
    pub fn merge(mut self, over: ConfigFile) -> ConfigFile {
        self.dataset = merge_section(self.dataset, over.dataset, |b, o| {
            overlay!(b, o; kind, n_clients, test_fraction, gamma1, gamma2, samples_per_client,
                dir, partition, balance, train_fraction);
        });
        self.model = merge_section(self.model, over.model, |b, o| {
            overlay!(b, o; kind, hidden, activation, weight_decay);
        });
        self.algorithm = merge_section(self.algorithm, over.algorithm, |b, o| {
            // A different algorithm discards the old one's knobs.
            if o.name.is_some() && o.name != b.name {
                *b = AlgorithmFile::default();
            }
            overlay!(b, o; name, alpha, mu, ablation, correction);
        });
        overlay!(self, over; setting, lr, lr_decay, local_epochs, batch_size, participation,
            aggregation, rounds, eval_every, targets, seed, threads, timing, output_dir);
        self
    }

    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let ds = self.dataset.clone().unwrap_or_default();
        let kind = ds
            .kind
            .ok_or_else(|| Error::Parameter("dataset.kind is required (synthetic or mnist)".into()))?;
        let seed = self.seed.unwrap_or(0);
        let d = Defaults::for_kind(kind);

        let dataset = match kind {
            DatasetKind::Synthetic => {
                reject(&[
                    ("dataset.dir", ds.dir.is_some()),
                    ("dataset.partition", ds.partition.is_some()),
                    ("dataset.balance", ds.balance.is_some()),
                    ("dataset.train_fraction", ds.train_fraction.is_some()),
                ], "synthetic")?;
                let mut cfg = SyntheticConfig::new(ds.gamma1.unwrap_or(0.0), ds.gamma2.unwrap_or(0.0), seed);
                cfg.n_clients = ds.n_clients.unwrap_or(d.n_clients);
                cfg.samples_per_client = ds.samples_per_client.unwrap_or(cfg.samples_per_client);
                cfg.test_fraction = ds.test_fraction.unwrap_or(cfg.test_fraction);
                cfg.validate()?;
                DatasetSpec::Synthetic(cfg)
            }
            DatasetKind::Mnist => {
                reject(&[
                    ("dataset.gamma1", ds.gamma1.is_some()),
                    ("dataset.gamma2", ds.gamma2.is_some()),
                    ("dataset.samples_per_client", ds.samples_per_client.is_some()),
                ], "mnist")?;
                let dir = ds.dir.clone().or_else(default_mnist_dir).ok_or_else(|| {
                    Error::Parameter(
                        "MNIST directory not found; set dataset.dir or FEDDRIFT_DATA_DIR".into(),
                    )
                })?;
                let plan = PartitionPlan::new(
                    ds.partition.unwrap_or(PartitionMode::Iid),
                    ds.balance.unwrap_or_default(),
                    seed,
                );
                plan.validate()?;
                let mut spec = MnistSpec::new(dir, ds.n_clients.unwrap_or(d.n_clients), plan);
                spec.train_fraction = ds.train_fraction.unwrap_or(1.0);
                spec.test_fraction = ds.test_fraction.unwrap_or(1.0);
                DatasetSpec::Mnist(spec)
            }
        };

        let m = self.model.clone().unwrap_or_default();
        let (input_dim, classes) = dataset.shape();
        let model_kind = m.kind.unwrap_or(d.model);
        let model = match model_kind {
            ModelKind::Logistic => {
                if m.hidden.as_ref().is_some_and(|h| !h.is_empty()) {
                    return Err(Error::Parameter("model.hidden does not apply to a logistic model".into()));
                }
                ModelSpec::logistic(input_dim, classes)
            }
            ModelKind::Mlp => ModelSpec::mlp(input_dim, m.hidden.clone().unwrap_or_else(|| d.hidden.clone()), classes),
        }
        .with_weight_decay(m.weight_decay.unwrap_or(d.weight_decay))
        .with_activation(m.activation.unwrap_or_default());
        model.validate()?;

        let a = self.algorithm.clone().unwrap_or_default();
        let name = a
            .name
            .ok_or_else(|| Error::Parameter("algorithm.name is required".into()))?;
        let algorithm = match name {
            AlgoName::FedAvg => {
                reject(&[("algorithm.alpha", a.alpha.is_some()), ("algorithm.mu", a.mu.is_some()),
                    ("algorithm.ablation", a.ablation.is_some()),
                    ("algorithm.correction", a.correction.is_some())], "fedavg")?;
                Algorithm::FedAvg
            }
            AlgoName::Scaffold => {
                reject(&[("algorithm.alpha", a.alpha.is_some()), ("algorithm.mu", a.mu.is_some()),
                    ("algorithm.ablation", a.ablation.is_some()),
                    ("algorithm.correction", a.correction.is_some())], "scaffold")?;
                Algorithm::Scaffold
            }
            AlgoName::FedProx => {
                reject(&[("algorithm.alpha", a.alpha.is_some()), ("algorithm.ablation", a.ablation.is_some()),
                    ("algorithm.correction", a.correction.is_some())], "fedprox")?;
                Algorithm::FedProx { mu: a.mu.unwrap_or(1e-4) }
            }
            AlgoName::FedDyn => {
                reject(&[("algorithm.mu", a.mu.is_some()), ("algorithm.ablation", a.ablation.is_some()),
                    ("algorithm.correction", a.correction.is_some())], "feddyn")?;
                Algorithm::FedDyn { alpha: a.alpha.unwrap_or(0.01) }
            }
            AlgoName::FedDc => {
                reject(&[("algorithm.mu", a.mu.is_some())], "feddc")?;
                Algorithm::FedDc {
                    alpha: a.alpha.unwrap_or(d.feddc_alpha),
                    ablation: a.ablation.unwrap_or_default(),
                    correction: a.correction.unwrap_or_default(),
                }
            }
        };
        let algo = AlgoConfig {
            algorithm,
            lr: self.lr.unwrap_or(0.1),
            lr_decay: self.lr_decay.unwrap_or(d.lr_decay),
            local_epochs: self.local_epochs.unwrap_or(d.local_epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            participation: self.participation.unwrap_or(1.0),
            aggregation: self.aggregation.unwrap_or_default(),
        };
        algo.validate()?;

        let cfg = ExperimentConfig {
            setting: self.setting.clone().unwrap_or_else(|| dataset.default_setting()),
            dataset,
            model,
            algo,
            rounds: self.rounds.unwrap_or(d.rounds),
            eval_every: self.eval_every.unwrap_or(d.eval_every),
            targets: self.targets.clone().unwrap_or_else(|| d.targets.clone()),
            seed,
            threads: self.threads,
            record_wall_time: self.timing.unwrap_or(false),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn merge_section<T: Default>(base: Option<T>, over: Option<T>, f: impl FnOnce(&mut T, T)) -> Option<T> {
    match (base, over) {
        (b, None) => b,
        (None, Some(o)) => Some(o),
        (Some(mut b), Some(o)) => {
            f(&mut b, o);
            Some(b)
        }
    }
}

fn reject(fields: &[(&str, bool)], context: &str) -> Result<()> {
    match fields.iter().find(|(_, set)| *set) {
        Some((name, _)) => Err(Error::Parameter(format!("{name} does not apply to {context}"))),
        None => Ok(()),
    }
}

/// Dataset-dependent defaults.
struct Defaults {
    n_clients: usize,
    model: ModelKind,
    hidden: Vec<usize>,
    weight_decay: f64,
    feddc_alpha: f64,
    lr_decay: f64,
    local_epochs: usize,
    batch_size: usize,
    rounds: usize,
    eval_every: usize,
    targets: Vec<f64>,
}

impl Defaults {
    fn for_kind(kind: DatasetKind) -> Self {
        match kind {
            DatasetKind::Synthetic => Defaults {
                n_clients: 20,
                model: ModelKind::Logistic,
                hidden: Vec::new(),
                weight_decay: 0.0,
                feddc_alpha: 0.005,
                lr_decay: 1.0,
                local_epochs: 10,
                batch_size: 10,
                rounds: 100,
                eval_every: 1,
                targets: vec![0.95, 0.98],
            },
            DatasetKind::Mnist => Defaults {
                n_clients: 100,
                model: ModelKind::Mlp,
                hidden: vec![200, 200],
                weight_decay: 1e-3,
                feddc_alpha: 0.1,
                lr_decay: 0.998,
                local_epochs: 5,
                batch_size: 50,
                rounds: 160,
                eval_every: 5,
                targets: vec![0.95, 0.98],
            },
        }
    }
}

/// A dataset to build.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    Synthetic(SyntheticConfig),
    Mnist(MnistSpec),
}

impl DatasetSpec {
    pub fn build(&self) -> Result<FederatedDataset> {
        match self {
            DatasetSpec::Synthetic(cfg) => generate_synthetic(cfg),
            DatasetSpec::Mnist(spec) => load_mnist_federated(spec),
        }
    }

    /// `(input_dim, num_classes)`.
    pub fn shape(&self) -> (usize, usize) {
        match self {
            DatasetSpec::Synthetic(cfg) => (cfg.input_dim, cfg.num_classes),
            DatasetSpec::Mnist(_) => (784, 10),
        }
    }

    pub fn n_clients(&self) -> usize {
        match self {
            DatasetSpec::Synthetic(cfg) => cfg.n_clients,
            DatasetSpec::Mnist(spec) => spec.n_clients,
        }
    }

    fn default_setting(&self) -> String {
        match self {
            DatasetSpec::Synthetic(cfg) => format!("synthetic({},{})", cfg.gamma1, cfg.gamma2),
            DatasetSpec::Mnist(spec) => match spec.plan.mode {
                PartitionMode::Iid => "mnist-iid".into(),
                PartitionMode::D1 => "mnist-d1".into(),
                PartitionMode::D2 => "mnist-d2".into(),
                PartitionMode::Dirichlet(c) => format!("mnist-dir{c}"),
            },
        }
    }
}

/// Fully specified experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub setting: String,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub algo: AlgoConfig,
    pub rounds: usize,
    pub eval_every: usize,
    pub targets: Vec<f64>,
    pub seed: u64,
    #[serde(skip)]
    pub threads: Option<usize>,
    #[serde(skip)]
    pub record_wall_time: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Parameter("rounds must be >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Parameter("eval_every must be >= 1".into()));
        }
        if let Some(t) = self.targets.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::Parameter(format!("target accuracies must be in (0, 1), got {t}")));
        }
        if self.threads == Some(0) {
            return Err(Error::Parameter("threads must be >= 1".into()));
        }
        self.model.validate()?;
        self.algo.validate()
    }

    pub fn algorithm_label(&self) -> String {
        self.algo.algorithm.label()
    }

    /// Everything that determines the trajectory, excluding the round
    /// budget. Used to match checkpoints to configs.
    pub fn fingerprint(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("object").remove("rounds");
        v.to_string()
    }
}

/// A named, built-in data setting.
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    build: fn() -> ConfigFile,
}

impl Preset {
    pub fn config(&self) -> ConfigFile {
        let mut cfg = (self.build)();
        cfg.setting = Some(self.name.into());
        cfg
    }
}

fn synthetic(g1: f64, g2: f64) -> ConfigFile {
    ConfigFile {
        dataset: Some(DatasetFile {
            kind: Some(DatasetKind::Synthetic),
            gamma1: Some(g1),
            gamma2: Some(g2),
            ..Default::default()
        }),
        ..Default::default()
    }
}

fn mnist(partition: PartitionMode, balance: Balance) -> ConfigFile {
    ConfigFile {
        dataset: Some(DatasetFile {
            kind: Some(DatasetKind::Mnist),
            partition: Some(partition),
            balance: Some(balance),
            ..Default::default()
        }),
        ..Default::default()
    }
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "synthetic-00",
        description: "synthetic, gamma1=0 gamma2=0 (homogeneous), 20 clients, logistic model",
        build: || synthetic(0.0, 0.0),
    },
    Preset {
        name: "synthetic-10",
        description: "synthetic, gamma1=1 (label-model heterogeneity), 20 clients",
        build: || synthetic(1.0, 0.0),
    },
    Preset {
        name: "synthetic-01",
        description: "synthetic, gamma2=1 (input heterogeneity), 20 clients",
        build: || synthetic(0.0, 1.0),
    },
    Preset {
        name: "mnist-iid",
        description: "MNIST, 100 clients, IID equal split, 784-200-200-10 MLP",
        build: || mnist(PartitionMode::Iid, Balance::Equal),
    },
    Preset {
        name: "mnist-d1",
        description: "MNIST, 100 clients, Dirichlet(0.6) label ratios",
        build: || mnist(PartitionMode::D1, Balance::Equal),
    },
    Preset {
        name: "mnist-d2",
        description: "MNIST, 100 clients, Dirichlet(0.3) label ratios",
        build: || mnist(PartitionMode::D2, Balance::Equal),
    },
    Preset {
        name: "unbalanced-0.3",
        description: "MNIST, 100 clients, IID labels, lognormal(var 0.3) sizes, sample-weighted aggregation",
        build: || {
            let mut c = mnist(PartitionMode::Iid, Balance::Lognormal(0.3));
            c.aggregation = Some(Weighting::BySamples);
            c
        },
    },
];

pub fn preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_algo(mut c: ConfigFile, name: AlgoName) -> ConfigFile {
        c.algorithm = Some(AlgorithmFile::named(name));
        c
    }

    #[test]
    fn synthetic_defaults() {
        let cfg = with_algo(preset("synthetic-00").unwrap().config(), AlgoName::FedDc)
            .resolve()
            .unwrap();
        assert_eq!(cfg.setting, "synthetic-00");
        assert_eq!(cfg.model, ModelSpec::logistic(30, 5));
        assert_eq!(cfg.algo.algorithm, Algorithm::feddc(0.005, Ablation::Lelglp));
        assert_eq!((cfg.algo.batch_size, cfg.algo.local_epochs, cfg.algo.lr), (10, 10, 0.1));
        assert_eq!(cfg.rounds, 100);
        assert_eq!(cfg.dataset.n_clients(), 20);
    }

    #[test]
    fn mnist_presets_carry_the_published_hyperparameters() {
        let mut base = with_algo(preset("mnist-d2").unwrap().config(), AlgoName::FedDc);
        base.dataset.as_mut().unwrap().dir = Some("/nonexistent".into());
        let cfg = base.resolve().unwrap();
        assert_eq!(cfg.algo.lr, 0.1);
        assert_eq!(cfg.algo.lr_decay, 0.998);
        assert_eq!(cfg.algo.batch_size, 50);
        assert_eq!(cfg.algo.local_epochs, 5);
        assert_eq!(cfg.algo.algorithm, Algorithm::feddc(0.1, Ablation::Lelglp));
        assert_eq!(cfg.model.hidden_dims, vec![200, 200]);
        assert_eq!(cfg.model.weight_decay, 1e-3);
        match &cfg.dataset {
            DatasetSpec::Mnist(s) => {
                assert_eq!(s.n_clients, 100);
                assert_eq!(s.plan.mode.concentration(), Some(0.3));
            }
            _ => panic!("expected mnist"),
        }
        let mut unb = with_algo(preset("unbalanced-0.3").unwrap().config(), AlgoName::FedProx);
        unb.dataset.as_mut().unwrap().dir = Some("/x".into());
        let cfg = unb.resolve().unwrap();
        assert_eq!(cfg.algo.aggregation, Weighting::BySamples);
        assert_eq!(cfg.algo.algorithm, Algorithm::FedProx { mu: 1e-4 });
    }

    #[test]
    fn merge_overrides_field_by_field() {
        let base = with_algo(synthetic(1.0, 0.0), AlgoName::FedDc);
        let over = ConfigFile {
            dataset: Some(DatasetFile { n_clients: Some(5), ..Default::default() }),
            algorithm: Some(AlgorithmFile { alpha: Some(0.3), ..Default::default() }),
            rounds: Some(7),
            ..Default::default()
        };
        let cfg = base.merge(over).resolve().unwrap();
        assert_eq!(cfg.dataset.n_clients(), 5);
        assert_eq!(cfg.rounds, 7);
        assert!(matches!(cfg.algo.algorithm, Algorithm::FedDc { alpha, .. } if alpha == 0.3));
        match cfg.dataset {
            DatasetSpec::Synthetic(s) => assert_eq!(s.gamma1, 1.0),
            _ => panic!(),
        }

        // Switching algorithm drops knobs that belonged to the old one.
        let base = with_algo(synthetic(0.0, 0.0), AlgoName::FedDc)
            .merge(ConfigFile { algorithm: Some(AlgorithmFile { alpha: Some(0.2), ..Default::default() }), ..Default::default() });
        let cfg = base.merge(with_algo(ConfigFile::default(), AlgoName::FedAvg)).resolve().unwrap();
        assert_eq!(cfg.algo.algorithm, Algorithm::FedAvg);
    }

    #[test]
    fn resolution_errors() {
        assert!(ConfigFile::default().resolve().is_err());
        assert!(synthetic(0.0, 0.0).resolve().is_err(), "algorithm required");
        let mut c = with_algo(synthetic(0.0, 0.0), AlgoName::FedAvg);
        c.algorithm.as_mut().unwrap().alpha = Some(0.1);
        assert!(c.resolve().is_err());
        let mut c = with_algo(synthetic(0.0, 0.0), AlgoName::FedAvg);
        c.rounds = Some(0);
        assert!(c.resolve().is_err());
        let mut c = with_algo(synthetic(0.0, 0.0), AlgoName::FedAvg);
        c.targets = Some(vec![1.0]);
        assert!(c.resolve().is_err());
        let mut c = with_algo(synthetic(0.0, 0.0), AlgoName::FedAvg);
        c.dataset.as_mut().unwrap().partition = Some(PartitionMode::D1);
        assert!(c.resolve().is_err());
        let mut c = with_algo(synthetic(0.0, 0.0), AlgoName::Scaffold);
        c.algorithm.as_mut().unwrap().correction = Some(Correction::Raw);
        assert!(c.resolve().is_err());
    }

    #[test]
    fn strict_schema() {
        let err = serde_json::from_str::<ConfigFile>(r#"{"algorithm":{"name":"feddc","alpha_":1}}"#).unwrap_err();
        assert!(err.to_string().contains("alpha_"));
        let c: ConfigFile = serde_json::from_str(
            r#"{"dataset":{"kind":"mnist","partition":{"dirichlet":0.5},"balance":{"lognormal":0.3}},
                "algorithm":{"name":"feddc","ablation":"lelp"},"aggregation":"by_samples"}"#,
        )
        .unwrap();
        assert_eq!(c.dataset.unwrap().partition, Some(PartitionMode::Dirichlet(0.5)));
        assert_eq!("FedDC".parse::<AlgoName>().unwrap(), AlgoName::FedDc);
        assert!("sgd".parse::<AlgoName>().is_err());
    }

    #[test]
    fn fingerprint_ignores_round_budget() {
        let c = with_algo(synthetic(0.0, 0.0), AlgoName::FedAvg);
        let a = c.clone().resolve().unwrap();
        let mut c2 = c.clone();
        c2.rounds = Some(3);
        c2.threads = Some(2);
        assert_eq!(a.fingerprint(), c2.resolve().unwrap().fingerprint());
        let mut c3 = c;
        c3.seed = Some(1);
        assert_ne!(a.fingerprint(), c3.resolve().unwrap().fingerprint());
    }
}
