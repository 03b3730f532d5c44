//! Client update strategies and server aggregation rules.

mod client;
mod objective;
mod server;

use serde::{Deserialize, Serialize};

pub use client::{run_local_round, sgd_steps, steps_per_round};
pub use objective::{feddc_local_objective_grad, LocalObjective};
pub use server::{gradient_variance_diagnostic, sample_active_set, server_aggregate};

use crate::error::{Error, Result};
use crate::math::ParamVector;

/// Which correction terms FedDC adds to the empirical loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    /// Empirical loss only.
    Le,
    /// Plus the gradient correction.
    Lelg,
    /// Plus the parameter correction.
    Lelp,
    /// Both corrections.
    #[default]
    Lelglp,
}

impl Ablation {
    pub fn grad_correction(self) -> bool {
        matches!(self, Ablation::Lelg | Ablation::Lelglp)
    }

    pub fn param_correction(self) -> bool {
        matches!(self, Ablation::Lelp | Ablation::Lelglp)
    }
}

/// What FedDC's gradient correction compares across clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correction {
    /// Local updates with the correction term's own contribution removed,
    /// so the term tracks the gap between global and local gradients.
    #[default]
    Net,
    /// Raw local updates. The correction then feeds back into itself and
    /// alternates between rounds.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum Algorithm {
    FedAvg,
    FedProx {
        mu: f64,
    },
    Scaffold,
    FedDyn {
        alpha: f64,
    },
    #[serde(rename = "feddc")]
    FedDc {
        alpha: f64,
        #[serde(default)]
        ablation: Ablation,
        #[serde(default)]
        correction: Correction,
    },
}

impl Algorithm {
    /// FedDC with the default gradient correction.
    pub const fn feddc(alpha: f64, ablation: Ablation) -> Self {
        Algorithm::FedDc { alpha, ablation, correction: Correction::Net }
    }

    pub fn label(&self) -> String {
        match self {
            Algorithm::FedAvg => "fedavg".into(),
            Algorithm::FedProx { .. } => "fedprox".into(),
            Algorithm::Scaffold => "scaffold".into(),
            Algorithm::FedDyn { .. } => "feddyn".into(),
            Algorithm::FedDc { ablation, correction, .. } => {
                let mut label = String::from("feddc");
                if *ablation != Ablation::Lelglp {
                    label.push('-');
                    label.push_str(serde_json::to_value(ablation).unwrap().as_str().unwrap());
                }
                if *correction == Correction::Raw {
                    label.push_str("-raw");
                }
                label
            }
        }
    }

    /// Parameter-sized vectors each active client uploads per round.
    pub fn upload_vectors(&self) -> u64 {
        match self {
            Algorithm::Scaffold => 2,
            _ => 1,
        }
    }

    /// Parameter-sized vectors each active client downloads per round.
    pub fn download_vectors(&self) -> u64 {
        match self {
            Algorithm::Scaffold | Algorithm::FedDc { .. } => 2,
            _ => 1,
        }
    }

    fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            Algorithm::FedProx { mu } => ("mu", mu),
            Algorithm::FedDyn { alpha } | Algorithm::FedDc { alpha, .. } => ("alpha", alpha),
            _ => return Ok(()),
        };
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::Parameter(format!("{name} must be finite and >= 0, got {v}")));
        }
        if matches!(self, Algorithm::FedDyn { .. }) && v == 0.0 {
            return Err(Error::Parameter("feddyn needs alpha > 0".into()));
        }
        Ok(())
    }
}

/// How client contributions are weighted at the server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    BySamples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoConfig {
    pub algorithm: Algorithm,
    pub lr: f64,
    pub lr_decay: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub participation: f64,
    pub aggregation: Weighting,
}

impl AlgoConfig {
    pub fn new(algorithm: Algorithm, lr: f64, local_epochs: usize, batch_size: usize) -> Self {
        AlgoConfig {
            algorithm,
            lr,
            lr_decay: 1.0,
            local_epochs,
            batch_size,
            participation: 1.0,
            aggregation: Weighting::Uniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.algorithm.validate()?;
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Parameter(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Parameter(format!("lr_decay must be in (0, 1], got {}", self.lr_decay)));
        }
        if self.local_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Parameter("local_epochs and batch_size must be >= 1".into()));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::Parameter(format!(
                "participation must be in (0, 1], got {}",
                self.participation
            )));
        }
        Ok(())
    }

    /// Learning rate used during the round that starts with `round` rounds
    /// already completed.
    pub fn lr_at(&self, round: usize) -> f64 {
        if self.lr_decay == 1.0 {
            self.lr
        } else {
            self.lr * self.lr_decay.powi(round as i32)
        }
    }
}

/// Per-client state that persists across rounds. Vectors an algorithm does
/// not use are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    pub n_samples: usize,
    /// Local model after the client's last round.
    pub theta: ParamVector,
    /// FedDC local drift `h_i`.
    pub drift: Option<ParamVector>,
    /// FedDC: the client's last local update.
    pub last_delta: Option<ParamVector>,
    /// Scaffold control variate `c_i`.
    pub scaffold_c: Option<ParamVector>,
    /// FedDyn linear-term state.
    pub dyn_grad: Option<ParamVector>,
}

impl ClientState {
    pub fn new(id: usize, n_samples: usize, init: &ParamVector, algorithm: &Algorithm) -> Self {
        let zeros = || Some(ParamVector::zeros(init.len()));
        let feddc = matches!(algorithm, Algorithm::FedDc { .. });
        ClientState {
            id,
            n_samples,
            theta: init.clone(),
            drift: if feddc { zeros() } else { None },
            last_delta: if feddc { zeros() } else { None },
            scaffold_c: if matches!(algorithm, Algorithm::Scaffold) { zeros() } else { None },
            dyn_grad: if matches!(algorithm, Algorithm::FedDyn { .. }) { zeros() } else { None },
        }
    }

    /// Installs the result of a local round.
    pub fn apply(&mut self, update: ClientUpdate) {
        debug_assert_eq!(update.client, self.id);
        if self.last_delta.is_some() {
            self.last_delta = Some(update.net_delta.clone().unwrap_or_else(|| update.delta.clone()));
        }
        self.theta = update.theta_plus;
        if update.drift_plus.is_some() {
            self.drift = update.drift_plus;
        }
        if update.scaffold_c_plus.is_some() {
            self.scaffold_c = update.scaffold_c_plus;
        }
        if update.dyn_grad_plus.is_some() {
            self.dyn_grad = update.dyn_grad_plus;
        }
    }

    /// Named vectors, in a fixed order, for serialization.
    pub fn vectors(&self) -> Vec<(&'static str, &ParamVector)> {
        let mut out = vec![("theta", &self.theta)];
        let optional = [
            ("drift", &self.drift),
            ("last_delta", &self.last_delta),
            ("scaffold_c", &self.scaffold_c),
            ("dyn_grad", &self.dyn_grad),
        ];
        out.extend(optional.into_iter().filter_map(|(n, v)| v.as_ref().map(|v| (n, v))));
        out
    }
}

/// Server state.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub global_params: ParamVector,
    /// FedDC: mean local update of the previous round.
    pub global_delta: Option<ParamVector>,
    /// Scaffold global control variate.
    pub scaffold_c: Option<ParamVector>,
    /// FedDyn server state.
    pub dyn_h: Option<ParamVector>,
    /// Completed rounds.
    pub round: usize,
    pub n_clients: usize,
    pub seed: u64,
}

impl ServerState {
    pub fn new(init: ParamVector, n_clients: usize, seed: u64, algorithm: &Algorithm) -> Self {
        let zeros = || Some(ParamVector::zeros(init.len()));
        ServerState {
            global_delta: if matches!(algorithm, Algorithm::FedDc { .. }) { zeros() } else { None },
            scaffold_c: if matches!(algorithm, Algorithm::Scaffold) { zeros() } else { None },
            dyn_h: if matches!(algorithm, Algorithm::FedDyn { .. }) { zeros() } else { None },
            global_params: init,
            round: 0,
            n_clients,
            seed,
        }
    }

    pub fn vectors(&self) -> Vec<(&'static str, &ParamVector)> {
        let mut out = vec![("global_params", &self.global_params)];
        let optional = [
            ("global_delta", &self.global_delta),
            ("scaffold_c", &self.scaffold_c),
            ("dyn_h", &self.dyn_h),
        ];
        out.extend(optional.into_iter().filter_map(|(n, v)| v.as_ref().map(|v| (n, v))));
        out
    }
}

/// What one client produces in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client: usize,
    pub theta_plus: ParamVector,
    /// `theta_plus - global_params` at round start.
    pub delta: ParamVector,
    /// FedDC: `delta` with the gradient-correction term's own contribution
    /// removed. `None` when the correction term was inactive.
    pub net_delta: Option<ParamVector>,
    pub drift_plus: Option<ParamVector>,
    /// FedDC upload `theta_plus + drift_plus`.
    pub upload: Option<ParamVector>,
    pub scaffold_c_plus: Option<ParamVector>,
    /// `scaffold_c_plus - c_i`.
    pub scaffold_c_delta: Option<ParamVector>,
    pub dyn_grad_plus: Option<ParamVector>,
    pub n_samples: usize,
    /// Local SGD steps taken.
    pub steps: usize,
    pub lr: f64,
    /// Mean minibatch objective loss over the round.
    pub mean_loss: f64,
    pub bytes_up: u64,
}
