//! Round loop, metrics, centralized reference training, checkpoints and
//! output files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::FederatedDataset;
use crate::error::{Error, Result};
use crate::federation::{
    gradient_variance_diagnostic, run_local_round, sample_active_set, server_aggregate, sgd_steps,
    steps_per_round, ClientState, ClientUpdate, LocalObjective, ServerState,
};
use crate::math::{ParamVector, Purpose, RngStream};
use crate::models::{evaluate, init_params, Evaluation};

/// Metrics for one completed round. `round` counts completed rounds, so the
/// first record has `round == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub algorithm: String,
    pub dataset: String,
    pub seed: u64,
    /// Present on evaluation rounds.
    pub test_accuracy: Option<f64>,
    /// Loss of the global model over the union of client partitions.
    pub train_loss: Option<f64>,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub grad_variance: Option<f64>,
    pub wall_ms: u64,
}

/// First round whose recorded accuracy meets `target`.
pub fn rounds_to_target(records: &[RoundRecord], target: f64) -> Option<usize> {
    records
        .iter()
        .find(|r| r.test_accuracy.is_some_and(|a| a >= target))
        .map(|r| r.round)
}

/// `R_baseline / R_method`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    pub value: f64,
    /// The baseline never reached the target, so its round count is the
    /// budget and `value` understates the true speedup.
    pub lower_bound: bool,
}

/// Speedup of a method over a baseline at one target. `None` when the
/// method itself never reached the target.
pub fn speedup(baseline: Option<usize>, method: Option<usize>, budget: usize) -> Option<Speedup> {
    let m = method?;
    Some(match baseline {
        Some(b) => Speedup {
            value: b as f64 / m as f64,
            lower_bound: false,
        },
        None => Speedup {
            value: budget as f64 / m as f64,
            lower_bound: true,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetResult {
    pub target: f64,
    /// `None` means not reached within the budget.
    pub rounds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speedup_vs_baseline: Option<Speedup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub setting: String,
    pub seed: u64,
    pub rounds: usize,
    pub best_accuracy: f64,
    pub final_accuracy: f64,
    pub targets: Vec<TargetResult>,
    pub total_bytes_up: u64,
    pub total_bytes_down: u64,
    pub dataset: serde_json::Value,
}

impl RunSummary {
    pub fn from_records(cfg: &ExperimentConfig, data: &FederatedDataset, records: &[RoundRecord]) -> Self {
        let accs = || records.iter().filter_map(|r| r.test_accuracy);
        RunSummary {
            algorithm: cfg.algorithm_label(),
            setting: cfg.setting.clone(),
            seed: cfg.seed,
            rounds: records.last().map_or(0, |r| r.round),
            best_accuracy: accs().fold(0.0, f64::max),
            final_accuracy: accs().next_back().unwrap_or(0.0),
            targets: cfg
                .targets
                .iter()
                .map(|&t| TargetResult {
                    target: t,
                    rounds: rounds_to_target(records, t),
                    speedup_vs_baseline: None,
                })
                .collect(),
            total_bytes_up: records.iter().map(|r| r.bytes_up).sum(),
            total_bytes_down: records.iter().map(|r| r.bytes_down).sum(),
            dataset: serde_json::to_value(&data.meta).expect("provenance serializes"),
        }
    }

    /// Fills in speedups against a baseline run on the same targets.
    pub fn set_speedups(&mut self, baseline: &RunSummary) {
        let budget = baseline.rounds;
        for t in &mut self.targets {
            let base = baseline.targets.iter().find(|b| b.target == t.target);
            t.speedup_vs_baseline = base.and_then(|b| speedup(b.rounds, t.rounds, budget));
        }
    }
}

/// A federated run in progress.
pub struct Experiment {
    cfg: ExperimentConfig,
    data: Arc<FederatedDataset>,
    server: ServerState,
    clients: Vec<ClientState>,
    records: Vec<RoundRecord>,
    pool: rayon::ThreadPool,
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Parameter(format!("cannot start worker pool: {e}")))
}

fn initial_params(cfg: &ExperimentConfig) -> Result<ParamVector> {
    init_params(&cfg.model, RngStream::keyed(cfg.seed, Purpose::Init, 0, 0))
}

fn check_dataset(cfg: &ExperimentConfig, data: &FederatedDataset) -> Result<()> {
    data.validate()?;
    if data.input_dim != cfg.model.input_dim || data.num_classes != cfg.model.num_classes {
        return Err(Error::Consistency(format!(
            "dataset is {}-dim with {} classes but model expects {} and {}",
            data.input_dim, data.num_classes, cfg.model.input_dim, cfg.model.num_classes
        )));
    }
    Ok(())
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let data = Arc::new(cfg.dataset.build()?);
        Self::with_dataset(cfg, data)
    }

    /// Runs on an already built dataset, e.g. one shared between runs.
    pub fn with_dataset(cfg: ExperimentConfig, data: Arc<FederatedDataset>) -> Result<Self> {
        cfg.validate()?;
        check_dataset(&cfg, &data)?;
        let init = initial_params(&cfg)?;
        let alg = cfg.algo.algorithm;
        let clients = (0..data.n_clients())
            .map(|i| ClientState::new(i, data.client_size(i), &init, &alg))
            .collect();
        let server = ServerState::new(init, data.n_clients(), cfg.seed, &alg);
        Ok(Experiment {
            pool: thread_pool(cfg.threads)?,
            cfg,
            data,
            server,
            clients,
            records: Vec::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn dataset(&self) -> &Arc<FederatedDataset> {
        &self.data
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    pub fn round(&self) -> usize {
        self.server.round
    }

    pub fn is_done(&self) -> bool {
        self.server.round >= self.cfg.rounds
    }

    /// Test-set metrics of the current global model. Read-only.
    pub fn evaluate_test(&self) -> Result<Evaluation> {
        evaluate(&self.cfg.model, &self.server.global_params, &self.data.test_view()?)
    }

    /// Loss and accuracy of the current global model on the pooled
    /// training partitions. Read-only.
    pub fn evaluate_train(&self) -> Result<Evaluation> {
        evaluate_pooled(&self.cfg, &self.data, &self.server.global_params)
    }

    fn is_eval_round(&self, round: usize) -> bool {
        round.is_multiple_of(self.cfg.eval_every) || round == self.cfg.rounds
    }

    /// Runs one round and returns its record.
    pub fn step(&mut self) -> Result<RoundRecord> {
        let round = self.server.round;
        self.step_inner().map_err(|e| e.in_round(round + 1))
    }

    fn step_inner(&mut self) -> Result<RoundRecord> {
        let started = Instant::now();
        let cfg = &self.cfg;
        let active = sample_active_set(self.data.n_clients(), cfg.algo.participation, cfg.seed, self.server.round);
        let (server, clients, data) = (&self.server, &self.clients, &*self.data);
        let results: Vec<Result<ClientUpdate>> = self.pool.install(|| {
            active
                .par_iter()
                .map(|&i| {
                    let shuffle = RngStream::keyed(server.seed, Purpose::Shuffle, i, server.round);
                    run_local_round(&cfg.model, &clients[i], server, &cfg.algo, data, shuffle)
                        .map_err(|e| e.in_client(i))
                })
                .collect()
        });
        let updates = results.into_iter().collect::<Result<Vec<_>>>()?;

        let next = server_aggregate(&self.server, &updates, &self.cfg.algo)?;
        let grad_variance = gradient_variance_diagnostic(&updates);
        let bytes_up = updates.iter().map(|u| u.bytes_up).sum();
        let bytes_down = updates.len() as u64
            * self.cfg.algo.algorithm.download_vectors()
            * 8
            * self.server.global_params.len() as u64;
        for u in updates {
            let id = u.client;
            self.clients[id].apply(u);
        }
        self.server = next;

        let round = self.server.round;
        let (test_accuracy, train_loss) = if self.is_eval_round(round) {
            (Some(self.evaluate_test()?.accuracy), Some(self.evaluate_train()?.loss))
        } else {
            (None, None)
        };
        let record = RoundRecord {
            round,
            algorithm: self.cfg.algorithm_label(),
            dataset: self.cfg.setting.clone(),
            seed: self.cfg.seed,
            test_accuracy,
            train_loss,
            bytes_up,
            bytes_down,
            grad_variance,
            wall_ms: if self.cfg.record_wall_time {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        };
        self.records.push(record.clone());
        Ok(record)
    }

    /// Runs the remaining rounds.
    pub fn run(&mut self) -> Result<()> {
        self.run_with(|_| {})
    }

    /// Like [`Experiment::run`], calling `progress` after each round.
    pub fn run_with(&mut self, mut progress: impl FnMut(&RoundRecord)) -> Result<()> {
        while !self.is_done() {
            let record = self.step()?;
            progress(&record);
        }
        Ok(())
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary::from_records(&self.cfg, &self.data, &self.records)
    }
}

/// Builds and runs an experiment to completion.
pub fn run_experiment(cfg: ExperimentConfig) -> Result<(Vec<RoundRecord>, RunSummary)> {
    let mut exp = Experiment::new(cfg)?;
    exp.run()?;
    Ok((exp.records.clone(), exp.summary()))
}

fn evaluate_pooled(cfg: &ExperimentConfig, data: &FederatedDataset, params: &ParamVector) -> Result<Evaluation> {
    let idx = data.pooled_indices();
    if idx.len() == data.n_train() {
        // Partitions cover the train set; its natural order is equivalent.
        return evaluate(&cfg.model, params, &data.train_view()?);
    }
    let batch = crate::models::Batch::gather(&data.train_inputs, &data.train_labels, data.input_dim, &idx);
    evaluate(&cfg.model, params, &batch.view())
}

/// Plain SGD on the pooled client data, as a reference for federated runs.
///
/// Each "round" takes `round(mean K)` steps, where `K` is the per-client
/// step count of the federated config, with the same learning-rate schedule.
/// Minibatches are drawn from the same shuffle stream client 0 uses, so a
/// one-client FedAvg run is reproduced exactly.
pub struct CentralizedTrainer {
    cfg: ExperimentConfig,
    data: Arc<FederatedDataset>,
    pooled: Vec<usize>,
    params: ParamVector,
    steps: usize,
    round: usize,
}

impl CentralizedTrainer {
    pub fn new(cfg: ExperimentConfig, data: Arc<FederatedDataset>) -> Result<Self> {
        cfg.validate()?;
        check_dataset(&cfg, &data)?;
        let sizes: Vec<usize> = data.partitions.iter().map(Vec::len).collect();
        let mean_k = sizes.iter().map(|&n| steps_per_round(n, &cfg.algo) as f64).sum::<f64>()
            / sizes.len() as f64;
        Ok(CentralizedTrainer {
            params: initial_params(&cfg)?,
            pooled: data.pooled_indices(),
            steps: mean_k.round() as usize,
            round: 0,
            cfg,
            data,
        })
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn steps_per_round(&self) -> usize {
        self.steps
    }

    pub fn step(&mut self) -> Result<()> {
        let mut theta = std::mem::replace(&mut self.params, ParamVector::zeros(0)).into_vec();
        let result = sgd_steps(
            &self.cfg.model,
            &self.data.train_inputs,
            &self.data.train_labels,
            &self.pooled,
            &mut theta,
            &LocalObjective::empirical(),
            self.cfg.algo.lr_at(self.round),
            self.cfg.algo.batch_size,
            self.steps,
            RngStream::keyed(self.cfg.seed, Purpose::Shuffle, 0, self.round),
        );
        self.params = ParamVector::new(theta)?;
        result.map_err(|e| e.in_round(self.round + 1))?;
        self.round += 1;
        Ok(())
    }

    fn record(&self) -> Result<RoundRecord> {
        let eval = evaluate(&self.cfg.model, &self.params, &self.data.test_view()?)?;
        let train = evaluate_pooled(&self.cfg, &self.data, &self.params)?;
        Ok(RoundRecord {
            round: self.round,
            algorithm: "centralized".into(),
            dataset: self.cfg.setting.clone(),
            seed: self.cfg.seed,
            test_accuracy: Some(eval.accuracy),
            train_loss: Some(train.loss),
            bytes_up: 0,
            bytes_down: 0,
            grad_variance: None,
            wall_ms: 0,
        })
    }
}

/// Centralized reference run with the federated run's evaluation cadence.
pub fn centralized_oracle(cfg: &ExperimentConfig, data: Arc<FederatedDataset>) -> Result<Vec<RoundRecord>> {
    let mut trainer = CentralizedTrainer::new(cfg.clone(), data)?;
    let mut out = Vec::new();
    while trainer.round < cfg.rounds {
        trainer.step()?;
        if trainer.round % cfg.eval_every == 0 || trainer.round == cfg.rounds {
            out.push(trainer.record()?);
        }
    }
    Ok(out)
}

/// Distance between federated and centralized parameters at one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub round: usize,
    pub distance: f64,
}

/// Runs a federated experiment and the centralized reference in lockstep
/// from the same initialization, recording `||Θ_fed − Θ_central||₂` at each
/// evaluation round.
pub fn run_paired(
    cfg: &ExperimentConfig,
    data: Arc<FederatedDataset>,
) -> Result<(Vec<RoundRecord>, Vec<RoundRecord>, Vec<Deviation>)> {
    let mut fed = Experiment::with_dataset(cfg.clone(), data.clone())?;
    let mut central = CentralizedTrainer::new(cfg.clone(), data)?;
    let mut central_records = Vec::new();
    let mut deviations = Vec::new();
    while !fed.is_done() {
        let rec = fed.step()?;
        central.step()?;
        if rec.test_accuracy.is_some() {
            central_records.push(central.record()?);
            deviations.push(Deviation {
                round: rec.round,
                distance: fed.server.global_params.distance(central.params())?,
            });
        }
    }
    Ok((fed.records, central_records, deviations))
}

// Checkpoints: magic, version, header length, JSON header, then each vector
// as a u64 element count followed by little-endian f64 values.

const MAGIC: &[u8; 4] = b"FDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    fingerprint: String,
    round: usize,
    param_count: usize,
    server_vectors: Vec<String>,
    client_vectors: Vec<Vec<String>>,
    records: Vec<RoundRecord>,
}

fn write_vector(w: &mut impl Write, v: &ParamVector) -> std::io::Result<()> {
    w.write_all(&(v.len() as u64).to_le_bytes())?;
    for x in v.as_slice() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

impl Experiment {
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            fingerprint: self.cfg.fingerprint(),
            round: self.server.round,
            param_count: self.server.global_params.len(),
            server_vectors: self.server.vectors().iter().map(|(n, _)| n.to_string()).collect(),
            client_vectors: self
                .clients
                .iter()
                .map(|c| c.vectors().iter().map(|(n, _)| n.to_string()).collect())
                .collect(),
            records: self.records.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&json).map_err(io)?;
        for (_, v) in self.server.vectors() {
            write_vector(&mut w, v).map_err(io)?;
        }
        for c in &self.clients {
            for (_, v) in c.vectors() {
                write_vector(&mut w, v).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    /// Restores a run saved by [`Experiment::save_checkpoint`]. `cfg` must
    /// describe the same experiment; only the round budget may differ.
    pub fn resume(cfg: ExperimentConfig, data: Arc<FederatedDataset>, path: &Path) -> Result<Self> {
        let mut exp = Experiment::with_dataset(cfg, data)?;
        let mut r = CheckpointReader::open(path)?;
        let header: CheckpointHeader = r.header()?;
        if header.fingerprint != exp.cfg.fingerprint() {
            return Err(Error::Mismatch("configuration differs from the checkpointed run".into()));
        }
        let p = exp.server.global_params.len();
        let names = |vs: Vec<(&'static str, &ParamVector)>| vs.iter().map(|(n, _)| n.to_string()).collect::<Vec<_>>();
        if header.param_count != p
            || header.server_vectors != names(exp.server.vectors())
            || header.client_vectors.len() != exp.clients.len()
            || header
                .client_vectors
                .iter()
                .zip(&exp.clients)
                .any(|(h, c)| *h != names(c.vectors()))
        {
            return Err(Error::Mismatch("state layout differs from this experiment".into()));
        }

        let s = &mut exp.server;
        s.global_params = r.vector(p)?;
        for slot in [&mut s.global_delta, &mut s.scaffold_c, &mut s.dyn_h] {
            if slot.is_some() {
                *slot = Some(r.vector(p)?);
            }
        }
        for c in &mut exp.clients {
            c.theta = r.vector(p)?;
            for slot in [&mut c.drift, &mut c.last_delta, &mut c.scaffold_c, &mut c.dyn_grad] {
                if slot.is_some() {
                    *slot = Some(r.vector(p)?);
                }
            }
        }
        r.finish()?;
        exp.server.round = header.round;
        exp.records = header.records;
        Ok(exp)
    }
}

struct CheckpointReader<'a> {
    path: &'a Path,
    r: BufReader<File>,
}

impl<'a> CheckpointReader<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(CheckpointReader {
            path,
            r: BufReader::new(file),
        })
    }

    fn format(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.into(),
            msg: msg.into(),
        }
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.r.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => self.format("file is truncated"),
            _ => Error::io(self.path, e),
        })?;
        Ok(buf)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn header<T: serde::de::DeserializeOwned>(&mut self) -> Result<T> {
        if self.bytes(4)? != MAGIC {
            return Err(self.format("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(self.bytes(4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let len = self.u64()?;
        if len > 1 << 32 {
            return Err(self.format("implausible header length"));
        }
        let json = self.bytes(len as usize)?;
        serde_json::from_slice(&json).map_err(|e| self.format(format!("bad header: {e}")))
    }

    fn vector(&mut self, expected: usize) -> Result<ParamVector> {
        let n = self.u64()? as usize;
        if n != expected {
            return Err(self.format(format!("vector of length {n}, expected {expected}")));
        }
        let raw = self.bytes(8 * n)?;
        let values = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        ParamVector::new(values)
    }

    fn finish(mut self) -> Result<()> {
        let mut rest = [0u8; 1];
        match self.r.read(&mut rest) {
            Ok(0) => Ok(()),
            Ok(_) => Err(self.format("trailing bytes after state")),
            Err(e) => Err(Error::io(self.path, e)),
        }
    }
}

/// Column order of the records CSV.
pub const CSV_HEADER: &str =
    "round,algorithm,dataset,seed,test_accuracy,train_loss,bytes_up,bytes_down,grad_variance,wall_ms";

pub fn write_records_csv(path: &Path, records: &[RoundRecord]) -> Result<()> {
    let io = |e: std::io::Error| Error::io(path, e);
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    if records.is_empty() {
        w.write_record(CSV_HEADER.split(',')).map_err(|e| io(e.into()))?;
    }
    for r in records {
        w.serialize(r).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

pub fn read_records_csv(path: &Path) -> Result<Vec<RoundRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    r.deserialize()
        .map(|row| {
            row.map_err(|e| Error::Format {
                path: path.into(),
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `records.csv` and `summary.json` into `dir`.
pub fn write_outputs(dir: &Path, records: &[RoundRecord], summary: &RunSummary) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_records_csv(&dir.join("records.csv"), records)?;
    write_json(&dir.join("summary.json"), summary)
}
