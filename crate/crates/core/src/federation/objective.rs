//! Local objectives: empirical loss plus algorithm-specific terms.
//!
//! Every supported algorithm adds at most a quadratic pull and a linear
//! term to the empirical loss:
//!
//! `L(θ) + (prox/2)·||θ − target||² + ⟨θ, linear⟩`
//!
//! | algorithm | prox | target  | linear                      |
//! |-----------|------|---------|-----------------------------|
//! | FedAvg    | 0    |         |                             |
//! | FedProx   | μ    | Θ       |                             |
//! | Scaffold  | 0    |         | c − c_i                     |
//! | FedDyn    | α    | Θ       | −∇̃_i                        |
//! | FedDC     | α    | Θ − h_i | (Δθ_i − Δθ) / (K·η)         |
//!
//! All quantities are frozen at round start. For FedDC, Δθ_i is the client's
//! previous local update and Δθ the mean over that round's active clients;
//! by default both exclude the correction term's own contribution.

use std::borrow::Cow;

use super::{Algorithm, AlgoConfig, ClientState, ServerState};
use crate::error::{Error, Result};
use crate::math::{same_len, ParamVector};
use crate::models::{loss, loss_and_grad_into, BatchRef, ModelSpec};

#[derive(Debug, Clone)]
pub struct LocalObjective<'a> {
    prox: f64,
    target: Option<Cow<'a, [f64]>>,
    linear: Option<Vec<f64>>,
}

fn missing(what: &str) -> Error {
    Error::Parameter(format!("state vector `{what}` missing for this algorithm"))
}

impl<'a> LocalObjective<'a> {
    /// Empirical loss only.
    pub fn empirical() -> Self {
        LocalObjective {
            prox: 0.0,
            target: None,
            linear: None,
        }
    }

    /// Objective for `client` in the round starting from `server`, where the
    /// client will take `steps` SGD steps.
    pub fn new(
        client: &ClientState,
        server: &'a ServerState,
        cfg: &AlgoConfig,
        steps: usize,
    ) -> Result<Self> {
        let global = server.global_params.as_slice();
        let p = global.len();
        let mut obj = LocalObjective::empirical();
        match cfg.algorithm {
            Algorithm::FedAvg => {}
            Algorithm::FedProx { mu } => {
                obj.prox = mu;
                obj.target = Some(Cow::Borrowed(global));
            }
            Algorithm::Scaffold => {
                let c = server.scaffold_c.as_ref().ok_or_else(|| missing("c"))?;
                let ci = client.scaffold_c.as_ref().ok_or_else(|| missing("c_i"))?;
                obj.linear = Some(c.sub(ci)?.into_vec());
            }
            Algorithm::FedDyn { alpha } => {
                let g = client.dyn_grad.as_ref().ok_or_else(|| missing("dyn_grad"))?;
                same_len(p, g.len())?;
                obj.prox = alpha;
                obj.target = Some(Cow::Borrowed(global));
                obj.linear = Some(g.as_slice().iter().map(|v| -v).collect());
            }
            Algorithm::FedDc { alpha, ablation, .. } => {
                if ablation.param_correction() {
                    let h = client.drift.as_ref().ok_or_else(|| missing("drift"))?;
                    obj.prox = alpha;
                    obj.target = Some(Cow::Owned(server.global_params.sub(h)?.into_vec()));
                }
                if ablation.grad_correction() {
                    let local = client.last_delta.as_ref().ok_or_else(|| missing("last_delta"))?;
                    let global = server.global_delta.as_ref().ok_or_else(|| missing("global_delta"))?;
                    let scale = steps as f64 * cfg.lr_at(server.round);
                    let diff = local.sub(global)?;
                    obj.linear = Some(diff.as_slice().iter().map(|d| d / scale).collect());
                }
            }
        }
        if obj.prox == 0.0 {
            obj.target = None;
        }
        if obj.linear.as_ref().is_some_and(|l| l.iter().all(|&v| v == 0.0)) {
            obj.linear = None;
        }
        if let Some(t) = &obj.target {
            same_len(p, t.len())?;
        }
        if let Some(l) = &obj.linear {
            same_len(p, l.len())?;
        }
        Ok(obj)
    }

    /// True when the objective is the bare empirical loss.
    pub fn is_empirical(&self) -> bool {
        self.target.is_none() && self.linear.is_none()
    }

    /// The constant linear term, if any.
    pub(crate) fn linear(&self) -> Option<&[f64]> {
        self.linear.as_deref()
    }

    /// Writes the objective gradient at `theta` into `grad` and returns the
    /// empirical part of the loss.
    pub(crate) fn grad_into(
        &self,
        spec: &ModelSpec,
        theta: &[f64],
        batch: &BatchRef<'_>,
        grad: &mut [f64],
    ) -> Result<f64> {
        if let Some(t) = &self.target {
            same_len(t.len(), theta.len())?;
        }
        if let Some(l) = &self.linear {
            same_len(l.len(), theta.len())?;
        }
        let value = loss_and_grad_into(spec, theta, batch, grad)?;
        if let Some(t) = &self.target {
            let prox = self.prox;
            for ((g, x), c) in grad.iter_mut().zip(theta).zip(t.iter()) {
                *g += prox * (x - c);
            }
        }
        if let Some(l) = &self.linear {
            for (g, v) in grad.iter_mut().zip(l) {
                *g += v;
            }
        }
        Ok(value)
    }

    pub fn grad(&self, spec: &ModelSpec, theta: &ParamVector, batch: &BatchRef<'_>) -> Result<ParamVector> {
        let mut grad = vec![0.0; theta.len()];
        self.grad_into(spec, theta.as_slice(), batch, &mut grad)?;
        ParamVector::new(grad)
    }

    /// Full scalar objective, for finite-difference checks.
    pub fn value(&self, spec: &ModelSpec, theta: &ParamVector, batch: &BatchRef<'_>) -> Result<f64> {
        let x = theta.as_slice();
        for len in [self.target.as_ref().map(|t| t.len()), self.linear.as_ref().map(Vec::len)]
            .into_iter()
            .flatten()
        {
            same_len(len, x.len())?;
        }
        let mut v = loss(spec, theta, batch)?;
        if let Some(t) = &self.target {
            let sq: f64 = x.iter().zip(t.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            v += 0.5 * self.prox * sq;
        }
        if let Some(l) = &self.linear {
            v += x.iter().zip(l).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(v)
    }
}

/// Gradient of the FedDC local objective at `theta` on one minibatch.
pub fn feddc_local_objective_grad(
    spec: &ModelSpec,
    client: &ClientState,
    server: &ServerState,
    cfg: &AlgoConfig,
    steps: usize,
    theta: &ParamVector,
    batch: &BatchRef<'_>,
) -> Result<ParamVector> {
    if !matches!(cfg.algorithm, Algorithm::FedDc { .. }) {
        return Err(Error::Parameter("configured algorithm is not FedDC".into()));
    }
    LocalObjective::new(client, server, cfg, steps)?.grad(spec, theta, batch)
}
