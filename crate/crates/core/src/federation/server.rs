//! Server-side aggregation and client sampling.

use super::{Algorithm, AlgoConfig, ClientUpdate, ServerState, Weighting};
use crate::error::{Error, Result};
use crate::math::{same_len, weighted_mean, ParamVector, Purpose, RngStream};

fn weights(updates: &[ClientUpdate], weighting: Weighting) -> Vec<f64> {
    match weighting {
        Weighting::Uniform => vec![1.0; updates.len()],
        Weighting::BySamples => updates.iter().map(|u| u.n_samples as f64).collect(),
    }
}

fn mean_of<F>(updates: &[ClientUpdate], ws: &[f64], pick: F) -> Result<ParamVector>
where
    F: Fn(&ClientUpdate) -> Option<&ParamVector>,
{
    let vs = updates
        .iter()
        .map(|u| pick(u).ok_or_else(|| Error::Parameter("update is missing a state vector".into())))
        .collect::<Result<Vec<_>>>()?;
    weighted_mean(&vs, ws)
}

/// `x + s·d`, leaving `x_j` untouched wherever `d_j == 0`.
fn shifted(x: &ParamVector, s: f64, d: &ParamVector) -> Result<ParamVector> {
    same_len(x.len(), d.len())?;
    let v = x
        .as_slice()
        .iter()
        .zip(d.as_slice())
        .map(|(&x, &d)| if d == 0.0 { x } else { x + s * d })
        .collect();
    ParamVector::new(v)
}

/// Folds one round of client updates (in the order given) into a new server
/// state.
pub fn server_aggregate(
    server: &ServerState,
    updates: &[ClientUpdate],
    cfg: &AlgoConfig,
) -> Result<ServerState> {
    if updates.is_empty() {
        return Err(Error::EmptyAggregate);
    }
    let ws = weights(updates, cfg.aggregation);
    let mut next = server.clone();
    next.round += 1;
    let coverage = updates.len() as f64 / server.n_clients as f64;

    match cfg.algorithm {
        Algorithm::FedAvg | Algorithm::FedProx { .. } => {
            next.global_params = mean_of(updates, &ws, |u| Some(&u.theta_plus))?;
        }
        Algorithm::FedDc { .. } => {
            next.global_params = mean_of(updates, &ws, |u| u.upload.as_ref())?;
            next.global_delta = Some(mean_of(updates, &ws, |u| Some(u.net_delta.as_ref().unwrap_or(&u.delta)))?);
        }
        Algorithm::Scaffold => {
            let mean_delta = mean_of(updates, &ws, |u| Some(&u.delta))?;
            next.global_params = shifted(&server.global_params, 1.0, &mean_delta)?;
            let c = server
                .scaffold_c
                .as_ref()
                .ok_or_else(|| Error::Parameter("scaffold server without c".into()))?;
            let dc = mean_of(updates, &ws, |u| u.scaffold_c_delta.as_ref())?;
            next.scaffold_c = Some(shifted(c, coverage, &dc)?);
        }
        Algorithm::FedDyn { alpha } => {
            let h = server
                .dyn_h
                .as_ref()
                .ok_or_else(|| Error::Parameter("feddyn server without h".into()))?;
            let mean_delta = mean_of(updates, &ws, |u| Some(&u.delta))?;
            let h = shifted(h, -alpha * coverage, &mean_delta)?;
            let mean_theta = mean_of(updates, &ws, |u| Some(&u.theta_plus))?;
            next.global_params = shifted(&mean_theta, -1.0 / alpha, &h)?;
            next.dyn_h = Some(h);
        }
    }
    Ok(next)
}

/// Clients taking part in a round: `max(1, round(participation · n))`
/// distinct ids drawn uniformly, sorted ascending.
pub fn sample_active_set(n_clients: usize, participation: f64, seed: u64, round: usize) -> Vec<usize> {
    let k = ((participation * n_clients as f64).round() as usize).clamp(1, n_clients.max(1));
    if k >= n_clients {
        return (0..n_clients).collect();
    }
    let mut ids = RngStream::keyed(seed, Purpose::Sampling, 0, round)
        .open()
        .choose(n_clients, k);
    ids.sort_unstable();
    ids
}

/// Spread of the clients' effective mean gradients `−delta_i / (K_i·η)`:
/// `(1/|C|) Σ ||g_i − ḡ||²`. `None` with fewer than two updates.
pub fn gradient_variance_diagnostic(updates: &[ClientUpdate]) -> Option<f64> {
    if updates.len() < 2 {
        return None;
    }
    let p = updates[0].delta.len();
    let n = updates.len() as f64;
    let scale = |u: &ClientUpdate| -1.0 / (u.steps.max(1) as f64 * u.lr);
    let mut mean = vec![0.0; p];
    for u in updates {
        let s = scale(u);
        for (m, d) in mean.iter_mut().zip(u.delta.as_slice()) {
            *m += s * d;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let total: f64 = updates
        .iter()
        .map(|u| {
            let s = scale(u);
            u.delta
                .as_slice()
                .iter()
                .zip(&mean)
                .map(|(d, m)| (s * d - m).powi(2))
                .sum::<f64>()
        })
        .sum();
    Some(total / n)
}
