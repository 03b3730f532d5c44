//! Local training.

use super::{Algorithm, AlgoConfig, Correction, ClientState, ClientUpdate, LocalObjective, ServerState};
use crate::data::FederatedDataset;
use crate::error::{Error, Result};
use crate::math::{check_finite, same_len, ParamVector, RngStream};
use crate::models::{Batch, ModelSpec};

/// SGD steps a client with `n_samples` takes per round: one per minibatch,
/// over `local_epochs` passes.
pub fn steps_per_round(n_samples: usize, cfg: &AlgoConfig) -> usize {
    cfg.local_epochs * n_samples.div_ceil(cfg.batch_size)
}

/// Runs `steps` SGD steps on the samples `indices` of `(inputs, labels)`.
///
/// Each pass over the samples draws a fresh permutation from `shuffle`; the
/// last minibatch of a pass may be short. Returns the mean empirical
/// minibatch loss.
#[allow(clippy::too_many_arguments)]
pub fn sgd_steps(
    spec: &ModelSpec,
    inputs: &[f64],
    labels: &[usize],
    indices: &[usize],
    theta: &mut [f64],
    objective: &LocalObjective<'_>,
    lr: f64,
    batch_size: usize,
    steps: usize,
    shuffle: RngStream,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Partition("client has no samples".into()));
    }
    let mut rng = shuffle.open();
    let mut grad = vec![0.0; theta.len()];
    let mut batch = Batch::gather(inputs, labels, spec.input_dim, &[]);
    let mut chunk = Vec::with_capacity(batch_size);
    let mut loss_sum = 0.0;
    let mut done = 0;
    while done < steps {
        let order = rng.permutation(indices.len());
        for part in order.chunks(batch_size) {
            if done == steps {
                break;
            }
            chunk.clear();
            chunk.extend(part.iter().map(|&p| indices[p]));
            batch.refill(inputs, labels, &chunk);
            loss_sum += objective.grad_into(spec, theta, &batch.view(), &mut grad)?;
            for (t, g) in theta.iter_mut().zip(&grad) {
                *t -= lr * g;
            }
            done += 1;
        }
    }
    check_finite(theta)?;
    Ok(if steps == 0 { 0.0 } else { loss_sum / steps as f64 })
}

/// One round of local training for `client`, starting from the server model.
pub fn run_local_round(
    spec: &ModelSpec,
    client: &ClientState,
    server: &ServerState,
    cfg: &AlgoConfig,
    data: &FederatedDataset,
    shuffle: RngStream,
) -> Result<ClientUpdate> {
    let global = &server.global_params;
    same_len(spec.param_count(), global.len())?;
    let indices = data
        .partitions
        .get(client.id)
        .ok_or_else(|| Error::Partition(format!("no partition for client {}", client.id)))?;
    if indices.is_empty() {
        return Err(Error::Partition(format!("client {} has no samples", client.id)));
    }
    let steps = steps_per_round(indices.len(), cfg);
    let lr = cfg.lr_at(server.round);
    let objective = LocalObjective::new(client, server, cfg, steps)?;

    let mut theta = global.as_slice().to_vec();
    let mean_loss = sgd_steps(
        spec,
        &data.train_inputs,
        &data.train_labels,
        indices,
        &mut theta,
        &objective,
        lr,
        cfg.batch_size,
        steps,
        shuffle,
    )?;
    let theta_plus = ParamVector::new(theta)?;
    let delta = theta_plus.sub(global)?;
    let net_delta = match objective.linear() {
        Some(lin) if matches!(cfg.algorithm, Algorithm::FedDc { correction: Correction::Net, .. }) => {
            // Each SGD step moved θ by −η·lin, so K steps contributed −Kη·lin.
            let scale = steps as f64 * lr;
            let v = delta.as_slice().iter().zip(lin).map(|(d, l)| d + scale * l).collect();
            Some(ParamVector::new(v)?)
        }
        _ => None,
    };
    drop(objective);

    let mut update = ClientUpdate {
        client: client.id,
        theta_plus,
        delta,
        net_delta,
        drift_plus: None,
        upload: None,
        scaffold_c_plus: None,
        scaffold_c_delta: None,
        dyn_grad_plus: None,
        n_samples: indices.len(),
        steps,
        lr,
        mean_loss,
        bytes_up: cfg.algorithm.upload_vectors() * 8 * global.len() as u64,
    };
    match cfg.algorithm {
        Algorithm::FedAvg | Algorithm::FedProx { .. } => {}
        Algorithm::Scaffold => {
            // c_i+ = c_i - c + (Θ - θ+) / (K η)
            let c = server.scaffold_c.as_ref().expect("checked by objective");
            let ci = client.scaffold_c.as_ref().expect("checked by objective");
            let scale = steps as f64 * lr;
            let v: Vec<f64> = ci
                .as_slice()
                .iter()
                .zip(c.as_slice())
                .zip(update.delta.as_slice())
                .map(|((ci, c), d)| ci - c - d / scale)
                .collect();
            let c_plus = ParamVector::new(v)?;
            update.scaffold_c_delta = Some(c_plus.sub(ci)?);
            update.scaffold_c_plus = Some(c_plus);
        }
        Algorithm::FedDyn { alpha } => {
            let g = client.dyn_grad.as_ref().expect("checked by objective");
            let v: Vec<f64> = g
                .as_slice()
                .iter()
                .zip(update.delta.as_slice())
                .map(|(g, d)| g - alpha * d)
                .collect();
            update.dyn_grad_plus = Some(ParamVector::new(v)?);
        }
        Algorithm::FedDc { .. } => {
            let h = client
                .drift
                .as_ref()
                .ok_or_else(|| Error::Parameter("FedDC client without drift state".into()))?;
            let drift_plus = h.add(&update.delta)?;
            update.upload = Some(update.theta_plus.add(&drift_plus)?);
            update.drift_plus = Some(drift_plus);
        }
    }
    Ok(update)
}
