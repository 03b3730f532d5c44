//! Multiclass logistic regression and fully connected networks with softmax
//! cross-entropy loss and hand-written backprop.
//!
//! Parameters live in one flat vector. Each layer stores its weight matrix
//! (`fan_out x fan_in`, row-major) followed by its bias (`fan_out`). Logistic
//! regression is the zero-hidden-layer case.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{check_finite, same_len, ParamVector, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logistic,
    Mlp,
}

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub weight_decay: f64,
    #[serde(default)]
    pub activation: Activation,
}

impl ModelSpec {
    pub fn logistic(input_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Logistic,
            input_dim,
            hidden_dims: Vec::new(),
            num_classes,
            weight_decay: 0.0,
            activation: Activation::Relu,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp,
            input_dim,
            hidden_dims,
            num_classes,
            weight_decay: 0.0,
            activation: Activation::Relu,
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(Error::Parameter("input_dim and num_classes must be positive".into()));
        }
        match self.kind {
            ModelKind::Logistic if !self.hidden_dims.is_empty() => {
                return Err(Error::Parameter("logistic model takes no hidden layers".into()))
            }
            ModelKind::Mlp if self.hidden_dims.is_empty() => {
                return Err(Error::Parameter("mlp needs at least one hidden layer".into()))
            }
            _ => {}
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Parameter("hidden layer widths must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::Parameter(format!(
                "weight_decay must be finite and >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` per layer, input to output.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend(&self.hidden_dims);
        dims.push(self.num_classes);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| (i + 1) * o).sum()
    }
}

/// Owned minibatch: `labels.len()` rows of `input_dim` features.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    input_dim: usize,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>, input_dim: usize) -> Result<Self> {
        BatchRef::new(&inputs, &labels, input_dim)?;
        Ok(Batch {
            inputs,
            labels,
            input_dim,
        })
    }

    /// Copies the rows named by `indices` out of a row-major sample matrix.
    pub fn gather(inputs: &[f64], labels: &[usize], input_dim: usize, indices: &[usize]) -> Self {
        let mut batch = Batch {
            inputs: Vec::with_capacity(indices.len() * input_dim),
            labels: Vec::with_capacity(indices.len()),
            input_dim,
        };
        batch.refill(inputs, labels, indices);
        batch
    }

    /// Like [`Batch::gather`] but reuses this batch's buffers.
    pub fn refill(&mut self, inputs: &[f64], labels: &[usize], indices: &[usize]) {
        self.inputs.clear();
        self.labels.clear();
        for &i in indices {
            self.inputs
                .extend_from_slice(&inputs[i * self.input_dim..(i + 1) * self.input_dim]);
            self.labels.push(labels[i]);
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn view(&self) -> BatchRef<'_> {
        BatchRef {
            inputs: &self.inputs,
            labels: &self.labels,
            input_dim: self.input_dim,
        }
    }
}

/// Borrowed view of a batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchRef<'a> {
    pub inputs: &'a [f64],
    pub labels: &'a [usize],
    pub input_dim: usize,
}

impl<'a> BatchRef<'a> {
    pub fn new(inputs: &'a [f64], labels: &'a [usize], input_dim: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        same_len(labels.len() * input_dim, inputs.len())?;
        Ok(BatchRef {
            inputs,
            labels,
            input_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn rows(&self, range: std::ops::Range<usize>) -> BatchRef<'a> {
        BatchRef {
            inputs: &self.inputs[range.start * self.input_dim..range.end * self.input_dim],
            labels: &self.labels[range],
            input_dim: self.input_dim,
        }
    }
}

/// Weights ~ N(0, 1) / sqrt(fan_in); biases zero.
pub fn init_params(spec: &ModelSpec, stream: RngStream) -> Result<ParamVector> {
    spec.validate()?;
    let mut rng = stream.open();
    let mut params = Vec::with_capacity(spec.param_count());
    for (fan_in, fan_out) in spec.layers() {
        let scale = 1.0 / (fan_in as f64).sqrt();
        params.extend((0..fan_in * fan_out).map(|_| rng.gaussian() * scale));
        params.extend(std::iter::repeat_n(0.0, fan_out));
    }
    Ok(ParamVector::from_vec_unchecked(params))
}

fn check_inputs(spec: &ModelSpec, params: &[f64], batch: &BatchRef<'_>) -> Result<()> {
    same_len(spec.param_count(), params.len())?;
    same_len(spec.input_dim, batch.input_dim)?;
    if let Some(&bad) = batch.labels.iter().find(|&&y| y >= spec.num_classes) {
        return Err(Error::Parameter(format!(
            "label {bad} out of range for {} classes",
            spec.num_classes
        )));
    }
    Ok(())
}

/// `c = beta * c + a * b` on strided row/column layouts.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(m == 0 || n == 0 || c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserted extents keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

struct LayerOffsets {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

fn offsets(spec: &ModelSpec) -> Vec<LayerOffsets> {
    let mut at = 0;
    spec.layers()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let w = at;
            let b = w + fan_in * fan_out;
            at = b + fan_out;
            LayerOffsets {
                fan_in,
                fan_out,
                w,
                b,
            }
        })
        .collect()
}

/// Runs the network and returns every layer's output; the last entry holds
/// the logits.
fn forward_layers(spec: &ModelSpec, params: &[f64], batch: &BatchRef<'_>) -> Vec<Vec<f64>> {
    let rows = batch.len();
    let layers = offsets(spec);
    let last = layers.len() - 1;
    let mut outs: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    for (l, lay) in layers.iter().enumerate() {
        let input: &[f64] = if l == 0 { batch.inputs } else { &outs[l - 1] };
        let mut z = vec![0.0; rows * lay.fan_out];
        let bias = &params[lay.b..lay.b + lay.fan_out];
        for row in z.chunks_exact_mut(lay.fan_out) {
            row.copy_from_slice(bias);
        }
        gemm(
            rows,
            lay.fan_in,
            lay.fan_out,
            input,
            (lay.fan_in, 1),
            &params[lay.w..lay.b],
            (1, lay.fan_in),
            1.0,
            &mut z,
            (lay.fan_out, 1),
        );
        if l != last {
            match spec.activation {
                Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
                Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
            }
        }
        outs.push(z);
    }
    outs
}

/// Row-wise log-sum-exp of a logits matrix, computed against the row max.
fn log_normalizers(logits: &[f64], classes: usize) -> Vec<f64> {
    logits
        .chunks_exact(classes)
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
        })
        .collect()
}

fn decay_penalty(spec: &ModelSpec, params: &[f64]) -> f64 {
    if spec.weight_decay == 0.0 {
        return 0.0;
    }
    let sq: f64 = offsets(spec)
        .iter()
        .map(|l| params[l.w..l.b].iter().map(|w| w * w).sum::<f64>())
        .sum();
    0.5 * spec.weight_decay * sq
}

/// Class-probability matrix (`batch.len() x num_classes`, row-major).
pub fn forward(spec: &ModelSpec, params: &ParamVector, batch: &BatchRef<'_>) -> Result<Vec<f64>> {
    check_inputs(spec, params.as_slice(), batch)?;
    let c = spec.num_classes;
    let mut logits = forward_layers(spec, params.as_slice(), batch).pop().unwrap_or_default();
    let norms = log_normalizers(&logits, c);
    for (row, lse) in logits.chunks_exact_mut(c).zip(norms) {
        row.iter_mut().for_each(|z| *z = (*z - lse).exp());
    }
    Ok(logits)
}

/// Mean cross-entropy plus `(weight_decay / 2) * ||weights||^2` (biases are
/// not decayed).
pub fn loss(spec: &ModelSpec, params: &ParamVector, batch: &BatchRef<'_>) -> Result<f64> {
    check_inputs(spec, params.as_slice(), batch)?;
    let (sum, _) = ce_sum_and_correct(spec, params.as_slice(), batch);
    Ok(sum / batch.len() as f64 + decay_penalty(spec, params.as_slice()))
}

/// Loss (as in [`loss`]) and its exact gradient.
pub fn loss_and_grad(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &BatchRef<'_>,
) -> Result<(f64, ParamVector)> {
    let mut grad = vec![0.0; params.len()];
    let loss = loss_and_grad_into(spec, params.as_slice(), batch, &mut grad)?;
    check_finite(&grad)?;
    Ok((loss, ParamVector::from_vec_unchecked(grad)))
}

/// Allocation-light variant of [`loss_and_grad`]; overwrites `grad`.
pub(crate) fn loss_and_grad_into(
    spec: &ModelSpec,
    params: &[f64],
    batch: &BatchRef<'_>,
    grad: &mut [f64],
) -> Result<f64> {
    check_inputs(spec, params, batch)?;
    same_len(params.len(), grad.len())?;
    let rows = batch.len();
    let c = spec.num_classes;
    let layers = offsets(spec);
    let mut outs = forward_layers(spec, params, batch);

    // Softmax cross-entropy; the logits buffer becomes dL/dz.
    let mut delta = outs.pop().unwrap_or_default();
    let norms = log_normalizers(&delta, c);
    let inv_rows = 1.0 / rows as f64;
    let mut ce = 0.0;
    for ((row, lse), &y) in delta.chunks_exact_mut(c).zip(norms).zip(batch.labels) {
        ce -= row[y] - lse;
        for z in row.iter_mut() {
            *z = (*z - lse).exp() * inv_rows;
        }
        row[y] -= inv_rows;
    }

    for (l, lay) in layers.iter().enumerate().rev() {
        let input: &[f64] = if l == 0 { batch.inputs } else { &outs[l - 1] };
        // dW = delta^T * input
        gemm(
            lay.fan_out,
            rows,
            lay.fan_in,
            &delta,
            (1, lay.fan_out),
            input,
            (lay.fan_in, 1),
            0.0,
            &mut grad[lay.w..lay.b],
            (lay.fan_in, 1),
        );
        let db = &mut grad[lay.b..lay.b + lay.fan_out];
        db.iter_mut().for_each(|v| *v = 0.0);
        for row in delta.chunks_exact(lay.fan_out) {
            for (acc, d) in db.iter_mut().zip(row) {
                *acc += d;
            }
        }
        if l > 0 {
            let mut prev = vec![0.0; rows * lay.fan_in];
            gemm(
                rows,
                lay.fan_out,
                lay.fan_in,
                &delta,
                (lay.fan_out, 1),
                &params[lay.w..lay.b],
                (lay.fan_in, 1),
                0.0,
                &mut prev,
                (lay.fan_in, 1),
            );
            match spec.activation {
                Activation::Relu => {
                    for (d, a) in prev.iter_mut().zip(input) {
                        if *a <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                Activation::Tanh => {
                    for (d, a) in prev.iter_mut().zip(input) {
                        *d *= 1.0 - a * a;
                    }
                }
            }
            delta = prev;
        }
    }

    if spec.weight_decay != 0.0 {
        for lay in &layers {
            for (g, w) in grad[lay.w..lay.b].iter_mut().zip(&params[lay.w..lay.b]) {
                *g += spec.weight_decay * w;
            }
        }
    }
    Ok(ce * inv_rows + decay_penalty(spec, params))
}

/// Summed cross-entropy and number of correct argmax predictions.
/// Ties go to the lowest class index.
fn ce_sum_and_correct(spec: &ModelSpec, params: &[f64], batch: &BatchRef<'_>) -> (f64, usize) {
    let c = spec.num_classes;
    let logits = forward_layers(spec, params, batch).pop().unwrap_or_default();
    let norms = log_normalizers(&logits, c);
    let mut ce = 0.0;
    let mut correct = 0;
    for ((row, lse), &y) in logits.chunks_exact(c).zip(norms).zip(batch.labels) {
        ce -= row[y] - lse;
        let mut best = 0;
        for (k, &z) in row.iter().enumerate().skip(1) {
            if z > row[best] {
                best = k;
            }
        }
        if best == y {
            correct += 1;
        }
    }
    (ce, correct)
}

/// Loss and top-1 accuracy over a whole sample set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

const EVAL_CHUNK: usize = 1000;

pub fn evaluate(spec: &ModelSpec, params: &ParamVector, data: &BatchRef<'_>) -> Result<Evaluation> {
    check_inputs(spec, params.as_slice(), data)?;
    let n = data.len();
    let mut ce = 0.0;
    let mut correct = 0;
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let (s, k) = ce_sum_and_correct(spec, params.as_slice(), &data.rows(start..end));
        ce += s;
        correct += k;
        start = end;
    }
    Ok(Evaluation {
        loss: ce / n as f64 + decay_penalty(spec, params.as_slice()),
        accuracy: correct as f64 / n as f64,
    })
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn accuracy(spec: &ModelSpec, params: &ParamVector, data: &BatchRef<'_>) -> Result<f64> {
    Ok(evaluate(spec, params, data)?.accuracy)
}
