//! Splitting a labelled pool across clients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Purpose, RngStream, StreamRng};

/// How labels are spread over clients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionMode {
    /// Uniform random assignment.
    Iid,
    /// Per-client label ratios drawn from a symmetric Dirichlet.
    Dirichlet(f64),
    /// Dirichlet with concentration 0.6.
    D1,
    /// Dirichlet with concentration 0.3.
    D2,
}

impl PartitionMode {
    pub fn concentration(&self) -> Option<f64> {
        match self {
            PartitionMode::Iid => None,
            PartitionMode::Dirichlet(c) => Some(*c),
            PartitionMode::D1 => Some(0.6),
            PartitionMode::D2 => Some(0.3),
        }
    }
}

/// How many samples each client receives.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Balance {
    /// Sizes differ by at most one.
    #[default]
    Equal,
    /// Sizes proportional to draws from a lognormal whose log has mean 0
    /// and the given variance.
    Lognormal(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionPlan {
    pub mode: PartitionMode,
    #[serde(default)]
    pub balance: Balance,
    #[serde(default)]
    pub seed: u64,
}

impl PartitionPlan {
    pub fn new(mode: PartitionMode, balance: Balance, seed: u64) -> Self {
        PartitionPlan {
            mode,
            balance,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.mode.concentration() {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::Parameter(format!(
                    "dirichlet concentration must be finite and > 0, got {c}"
                )));
            }
        }
        if let Balance::Lognormal(v) = self.balance {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!(
                    "lognormal variance must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Assigns every index of `labels` to exactly one of `n_clients` clients.
pub fn partition(
    labels: &[usize],
    num_classes: usize,
    n_clients: usize,
    plan: &PartitionPlan,
) -> Result<Vec<Vec<usize>>> {
    plan.validate()?;
    if n_clients == 0 {
        return Err(Error::Parameter("need at least one client".into()));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::Parameter(format!("label {y} out of range for {num_classes} classes")));
    }
    let n = labels.len();
    if n < n_clients {
        return Err(Error::Partition(format!(
            "{n} samples cannot fill {n_clients} nonempty partitions (shortfall {})",
            n_clients - n
        )));
    }
    let mut rng = RngStream::keyed(plan.seed, Purpose::Partition, 0, 0).open();
    let quotas = quotas(n, n_clients, plan.balance, &mut rng)?;
    match plan.mode.concentration() {
        None => {
            let perm = rng.permutation(n);
            let mut rest = perm.as_slice();
            Ok(quotas
                .iter()
                .map(|&q| {
                    let (head, tail) = rest.split_at(q);
                    rest = tail;
                    head.to_vec()
                })
                .collect())
        }
        Some(conc) => dirichlet_fill(labels, num_classes, &quotas, conc, &mut rng),
    }
}

/// Client sizes summing to `n`, each at least 1.
fn quotas(n: usize, k: usize, balance: Balance, rng: &mut StreamRng) -> Result<Vec<usize>> {
    match balance {
        Balance::Equal => Ok((0..k).map(|i| n / k + usize::from(i < n % k)).collect()),
        Balance::Lognormal(var) => {
            let draws = (0..k)
                .map(|_| rng.lognormal(0.0, var))
                .collect::<Result<Vec<f64>>>()?;
            let total: f64 = draws.iter().sum();
            let raw: Vec<f64> = draws.iter().map(|w| n as f64 * w / total).collect();
            let mut sizes: Vec<usize> = raw.iter().map(|r| (r.floor() as usize).max(1)).collect();

            // Largest fractional parts get the leftover samples; ties go to
            // the lower client index.
            let mut by_frac: Vec<usize> = (0..k).collect();
            by_frac.sort_by(|&a, &b| {
                let fa = raw[a] - raw[a].floor();
                let fb = raw[b] - raw[b].floor();
                fb.total_cmp(&fa).then(a.cmp(&b))
            });
            let mut assigned: usize = sizes.iter().sum();
            let mut cursor = 0;
            while assigned < n {
                sizes[by_frac[cursor % k]] += 1;
                assigned += 1;
                cursor += 1;
            }
            // Minimum-size bumps can overshoot; take back from the largest.
            while assigned > n {
                let big = (0..k)
                    .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
                    .filter(|&i| sizes[i] > 1)
                    .ok_or_else(|| Error::Partition("cannot satisfy minimum sizes".into()))?;
                sizes[big] -= 1;
                assigned -= 1;
            }
            Ok(sizes)
        }
    }
}

/// Samples each client's quota without replacement according to its own
/// Dirichlet label ratio. At every step a client with unfilled quota is
/// picked uniformly, then a class from its ratio restricted to classes
/// still in stock.
fn dirichlet_fill(
    labels: &[usize],
    num_classes: usize,
    quotas: &[usize],
    conc: f64,
    rng: &mut StreamRng,
) -> Result<Vec<Vec<usize>>> {
    let k = quotas.len();
    let ratios = (0..k)
        .map(|_| rng.dirichlet(num_classes, conc))
        .collect::<Result<Vec<_>>>()?;
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        pools[y].push(i);
    }
    for pool in &mut pools {
        let perm = rng.permutation(pool.len());
        *pool = perm.into_iter().map(|p| pool[p]).collect();
    }

    let mut parts: Vec<Vec<usize>> = quotas.iter().map(|&q| Vec::with_capacity(q)).collect();
    let mut open: Vec<usize> = (0..k).filter(|&c| quotas[c] > 0).collect();
    let mut weights = vec![0.0; num_classes];
    while !open.is_empty() {
        let slot = rng.choose(open.len(), 1)[0];
        let client = open[slot];
        for (w, (r, pool)) in weights.iter_mut().zip(ratios[client].iter().zip(&pools)) {
            *w = if pool.is_empty() { 0.0 } else { *r };
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            // The client's preferred classes are exhausted; fall back to
            // whatever stock is left, proportionally.
            for (w, pool) in weights.iter_mut().zip(&pools) {
                *w = pool.len() as f64;
            }
        }
        let class = rng.weighted_index(&weights);
        let sample = pools[class]
            .pop()
            .ok_or_else(|| Error::Partition("sample pool exhausted".into()))?;
        parts[client].push(sample);
        if parts[client].len() == quotas[client] {
            open.swap_remove(slot);
        }
    }
    Ok(parts)
}
