//! Numeric substrate: flat parameter vectors, seeded RNG streams and a
//! central-difference gradient oracle.

use std::ops::Index;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat vector of `f64` model parameters (or gradients, drifts, control
/// variates). Length is fixed at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    /// Wraps `values`, rejecting NaN and infinities.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        Ok(ParamVector(values))
    }

    /// Wraps values already known to be finite.
    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        ParamVector(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        same_len(self.len(), other.len())?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    /// Euclidean distance to `other`.
    pub fn distance(&self, other: &ParamVector) -> Result<f64> {
        same_len(self.len(), other.len())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// `self - other`.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        axpy(-1.0, other, self)
    }

    /// `self + other`.
    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        axpy(1.0, other, self)
    }

    pub fn scale(&self, a: f64) -> Result<ParamVector> {
        let out: Vec<f64> = self.0.iter().map(|v| a * v).collect();
        check_finite(&out)?;
        Ok(ParamVector(out))
    }

    /// True when every element compares bit-for-bit equal.
    pub fn bit_eq(&self, other: &ParamVector) -> bool {
        self.len() == other.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn same_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { expected, found })
    }
}

pub(crate) fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// Returns `a * x + y`.
pub fn axpy(a: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    same_len(x.len(), y.len())?;
    if !a.is_finite() {
        return Err(Error::Parameter(format!("axpy scale must be finite, got {a}")));
    }
    let out: Vec<f64> = x.0.iter().zip(&y.0).map(|(xi, yi)| a * xi + yi).collect();
    check_finite(&out)?;
    Ok(ParamVector(out))
}

/// Weighted average `Σ (w_i / Σw) · v_i`.
///
/// Reduction runs over `vs` in index order, so the result is reproducible
/// regardless of how the inputs were produced. With all weights equal the
/// result is the plain left-fold sum divided by `n`; otherwise the products
/// `w_i · v_i` are summed and divided once by `Σw`. Elements on which every
/// input agrees are returned unchanged.
pub fn weighted_mean(vs: &[&ParamVector], ws: &[f64]) -> Result<ParamVector> {
    let first = *vs.first().ok_or(Error::EmptyAggregate)?;
    same_len(vs.len(), ws.len())?;
    if let Some(w) = ws.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::Weight(format!("weights must be finite and nonnegative, got {w}")));
    }
    let total: f64 = ws.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Weight(format!("weight sum must be positive, got {total}")));
    }
    for v in vs {
        same_len(first.len(), v.len())?;
    }

    let n = first.len();
    let equal = ws.iter().all(|w| *w == ws[0]);
    let mut acc = vec![0.0; n];
    let mut agree = vec![true; n];
    for (v, &w) in vs.iter().zip(ws) {
        let src = v.as_slice();
        if equal {
            for j in 0..n {
                acc[j] += src[j];
            }
        } else {
            for j in 0..n {
                acc[j] += w * src[j];
            }
        }
        for j in 0..n {
            agree[j] &= src[j] == first.0[j];
        }
    }
    let denom = if equal { vs.len() as f64 } else { total };
    for j in 0..n {
        acc[j] = if agree[j] { first.0[j] } else { acc[j] / denom };
    }
    check_finite(&acc)?;
    Ok(ParamVector(acc))
}

/// Central finite-difference gradient of `f` at `x`.
///
/// Coordinate `j` is probed with step `h · max(1, |x_j|)`.
pub fn finite_diff_grad<F>(f: F, x: &ParamVector, h: f64) -> Result<ParamVector>
where
    F: Fn(&ParamVector) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("step must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let xj = x.0[j];
        let step = h * xj.abs().max(1.0);
        probe.0[j] = xj + step;
        let plus = f(&probe);
        probe.0[j] = xj - step;
        let minus = f(&probe);
        probe.0[j] = xj;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite { index: j });
        }
        grad.push((plus - minus) / (2.0 * step));
    }
    check_finite(&grad)?;
    Ok(ParamVector(grad))
}

/// What an RNG stream is used for. Part of the stream id, so draws for one
/// purpose never alias draws for another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Init = 1,
    Synthetic = 2,
    Partition = 3,
    Sampling = 4,
    Shuffle = 5,
    Subsample = 6,
    Test = 0xFF,
}

/// Identifies an independent, replayable sequence of random draws.
///
/// The ChaCha8 key is derived from `seed` and `stream_id` selects the
/// cipher's stream, so streams can be opened in any order, on any thread,
/// and always produce the same draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    /// Stream keyed by `(purpose, client, round)`.
    ///
    /// Layout of the id: purpose in the top 8 bits, client in the next 24,
    /// round in the low 32.
    pub fn keyed(seed: u64, purpose: Purpose, client: usize, round: usize) -> Self {
        debug_assert!(client < (1 << 24));
        let id = ((purpose as u64) << 56)
            | (((client as u64) & 0x00FF_FFFF) << 32)
            | ((round as u64) & 0xFFFF_FFFF);
        RngStream::new(seed, id)
    }

    /// Opens the stream at draw index 0.
    pub fn open(&self) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        StreamRng { rng }
    }
}

/// Cursor over an [`RngStream`]; each call advances the draw index.
pub struct StreamRng {
    rng: ChaCha8Rng,
}

impl StreamRng {
    /// Uniform draw in `[0, 1)`.
    pub fn uniform01(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Standard normal draw.
    pub fn gaussian(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Normal draw with the given mean and variance.
    pub fn normal(&mut self, mean: f64, variance: f64) -> Result<f64> {
        if !(variance >= 0.0) || !variance.is_finite() || !mean.is_finite() {
            return Err(Error::Parameter(format!(
                "normal needs finite mean and variance >= 0, got N({mean}, {variance})"
            )));
        }
        Ok(mean + variance.sqrt() * self.gaussian())
    }

    /// Probability vector of length `k` drawn from `Dir(conc, ..., conc)`.
    pub fn dirichlet(&mut self, k: usize, conc: f64) -> Result<Vec<f64>> {
        if k == 0 || !(conc > 0.0) || !conc.is_finite() {
            return Err(Error::Parameter(format!(
                "dirichlet needs k >= 1 and finite conc > 0, got k={k}, conc={conc}"
            )));
        }
        let gamma = Gamma::new(conc, 1.0).map_err(|e| Error::Parameter(e.to_string()))?;
        let mut draws: Vec<f64> = (0..k).map(|_| gamma.sample(&mut self.rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            for d in &mut draws {
                *d /= total;
            }
        } else {
            // Every gamma draw underflowed (tiny conc); the limit law puts
            // all mass on one uniformly chosen coordinate.
            let hot = self.rng.random_range(0..k);
            draws.iter_mut().enumerate().for_each(|(i, d)| *d = if i == hot { 1.0 } else { 0.0 });
        }
        Ok(draws)
    }

    /// Lognormal draw whose underlying normal has mean `mu` and variance `var`.
    pub fn lognormal(&mut self, mu: f64, var: f64) -> Result<f64> {
        if !(var >= 0.0) || !var.is_finite() || !mu.is_finite() {
            return Err(Error::Parameter(format!(
                "lognormal needs finite mu and var >= 0, got mu={mu}, var={var}"
            )));
        }
        let dist = LogNormal::new(mu, var.sqrt()).map_err(|e| Error::Parameter(e.to_string()))?;
        Ok(dist.sample(&mut self.rng))
    }

    /// Index drawn with probabilities `ps`.
    pub fn categorical(&mut self, ps: &[f64]) -> Result<usize> {
        let total: f64 = ps.iter().sum();
        if ps.is_empty()
            || ps.iter().any(|p| !(*p >= 0.0) || !p.is_finite())
            || (total - 1.0).abs() > 1e-9
        {
            return Err(Error::Parameter(format!("not a probability vector: {ps:?}")));
        }
        Ok(sample_weighted(&mut self.rng, ps, total))
    }

    /// Uniformly random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut self.rng);
        idx
    }

    /// `k` distinct values from `0..n`, uniformly without replacement, in
    /// draw order.
    pub fn choose(&mut self, n: usize, k: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.rng, n, k.min(n)).into_vec()
    }

    /// Index drawn proportionally to nonnegative `weights` (need not sum to 1).
    pub(crate) fn weighted_index(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        sample_weighted(&mut self.rng, weights, total)
    }
}

fn sample_weighted(rng: &mut ChaCha8Rng, weights: &[f64], total: f64) -> usize {
    let u = rng.random::<f64>() * total;
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            cum += w;
            last_positive = i;
            if u < cum {
                return i;
            }
        }
    }
    last_positive
}
