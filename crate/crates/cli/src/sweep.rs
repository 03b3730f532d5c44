use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use feddrift::config::{preset, AlgoName, AlgorithmFile, ConfigFile, ExperimentConfig};
use feddrift::data::FederatedDataset;
use feddrift::engine::{write_json, write_outputs, Experiment, RunSummary};
use serde::Deserialize;

use crate::{read_json, CliError};

#[derive(Args)]
pub struct SweepArgs {
    /// JSON manifest listing settings, algorithms and seeds.
    manifest: PathBuf,
    /// Keep running after a failed run instead of aborting.
    #[arg(long)]
    keep_going: bool,
    /// Cap on client worker threads for every run.
    #[arg(long)]
    threads: Option<usize>,
    /// Override the manifest's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    output_dir: Option<PathBuf>,
    settings: Vec<SettingEntry>,
    algorithms: Vec<AlgoEntry>,
    #[serde(default = "default_seeds")]
    seeds: Vec<u64>,
    /// Applied to every run, on top of the setting.
    #[serde(default)]
    overrides: ConfigFile,
    /// Label of the run speedups are measured against (default `fedavg`).
    baseline: Option<String>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SettingEntry {
    Preset(String),
    Custom(Box<CustomSetting>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CustomSetting {
    name: String,
    config: ConfigFile,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AlgoEntry {
    Name(String),
    Custom(CustomAlgo),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CustomAlgo {
    label: Option<String>,
    algorithm: AlgorithmFile,
}

struct Planned {
    setting: String,
    label: String,
    cfg: ExperimentConfig,
}

fn config_error(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn plan(manifest: &Manifest, threads: Option<usize>) -> Result<Vec<Planned>, CliError> {
    if manifest.settings.is_empty() || manifest.algorithms.is_empty() || manifest.seeds.is_empty() {
        return Err(CliError::Config(
            "manifest needs at least one setting, one algorithm and one seed".into(),
        ));
    }
    let mut runs = Vec::new();
    let mut seen = HashSet::new();
    for setting in &manifest.settings {
        let (name, base) = match setting {
            SettingEntry::Preset(name) => {
                let p = preset(name).ok_or_else(|| CliError::Config(format!("unknown preset `{name}`")))?;
                (name.clone(), p.config())
            }
            SettingEntry::Custom(c) => {
                let mut cfg = c.config.clone();
                cfg.setting = Some(c.name.clone());
                (c.name.clone(), cfg)
            }
        };
        for algo in &manifest.algorithms {
            let (label, algorithm) = match algo {
                AlgoEntry::Name(n) => {
                    let name: AlgoName = n.parse().map_err(config_error)?;
                    (None, AlgorithmFile::named(name))
                }
                AlgoEntry::Custom(c) => (c.label.clone(), c.algorithm.clone()),
            };
            for &seed in &manifest.seeds {
                let file = base.clone().merge(manifest.overrides.clone()).merge(ConfigFile {
                    setting: Some(name.clone()),
                    algorithm: Some(algorithm.clone()),
                    seed: Some(seed),
                    threads: threads.or(manifest.overrides.threads),
                    ..Default::default()
                });
                let cfg = file
                    .resolve()
                    .map_err(|e| CliError::Config(format!("{name}: {e}")))?;
                let label = label.clone().unwrap_or_else(|| cfg.algorithm_label());
                if !seen.insert((label.clone(), name.clone(), seed)) {
                    return Err(CliError::Config(format!(
                        "duplicate run: algorithm `{label}`, setting `{name}`, seed {seed}"
                    )));
                }
                runs.push(Planned {
                    setting: name.clone(),
                    label,
                    cfg,
                });
            }
        }
    }
    Ok(runs)
}

struct Outcome {
    setting: String,
    label: String,
    seed: u64,
    summary: Option<RunSummary>,
}

pub fn sweep(args: SweepArgs) -> Result<(), CliError> {
    let manifest: Manifest = read_json(&args.manifest)?;
    let runs = plan(&manifest, args.threads)?;
    let out = args
        .out
        .clone()
        .or(manifest.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out/sweep"));
    let baseline = manifest.baseline.clone().unwrap_or_else(|| "fedavg".into());

    let mut datasets: HashMap<String, Arc<FederatedDataset>> = HashMap::new();
    let mut outcomes = Vec::new();
    let mut failures = 0;
    let total = runs.len();
    for (i, run) in runs.into_iter().enumerate() {
        let seed = run.cfg.seed;
        eprintln!("[{}/{total}] {} / {} / seed {seed}", i + 1, run.setting, run.label);
        let result = execute(&run, &out, &mut datasets);
        let summary = match result {
            Ok(s) => Some(s),
            Err(e) if args.keep_going => {
                eprintln!("  failed: {e}");
                failures += 1;
                None
            }
            Err(e) => {
                return Err(CliError::Runtime(feddrift::Error::Consistency(format!(
                    "run {} / {} / seed {seed} failed: {e}",
                    run.setting, run.label
                ))))
            }
        };
        outcomes.push(Outcome {
            setting: run.setting,
            label: run.label,
            seed,
            summary,
        });
    }

    apply_speedups(&mut outcomes, &baseline);
    std::fs::create_dir_all(&out).map_err(|e| feddrift::Error::Io { path: out.clone(), source: e })?;
    write_table_csv(&out.join("table.csv"), &outcomes)?;
    let md = table_markdown(&outcomes, &baseline);
    std::fs::write(out.join("table.md"), &md).map_err(|e| feddrift::Error::Io { path: out.join("table.md"), source: e })?;
    print!("{md}");
    if failures > 0 {
        return Err(CliError::Failed(format!("{failures} of {total} runs failed")));
    }
    Ok(())
}

fn execute(
    run: &Planned,
    out: &Path,
    datasets: &mut HashMap<String, Arc<FederatedDataset>>,
) -> feddrift::Result<RunSummary> {
    let key = serde_json::to_string(&run.cfg.dataset).expect("dataset spec serializes");
    let data = match datasets.get(&key) {
        Some(d) => d.clone(),
        None => {
            let d = Arc::new(run.cfg.dataset.build()?);
            datasets.insert(key, d.clone());
            d
        }
    };
    let mut exp = Experiment::with_dataset(run.cfg.clone(), data)?;
    exp.run()?;
    let mut summary = exp.summary();
    summary.algorithm = run.label.clone();
    let dir = out
        .join(sanitize(&run.setting))
        .join(sanitize(&run.label))
        .join(format!("seed-{}", run.cfg.seed));
    write_outputs(&dir, exp.records(), &summary)?;
    write_json(&dir.join("config.json"), exp.config())?;
    Ok(summary)
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn apply_speedups(outcomes: &mut [Outcome], baseline: &str) {
    let bases: HashMap<(String, u64), RunSummary> = outcomes
        .iter()
        .filter(|o| o.label == baseline)
        .filter_map(|o| o.summary.clone().map(|s| ((o.setting.clone(), o.seed), s)))
        .collect();
    for o in outcomes.iter_mut() {
        if let (Some(s), Some(b)) = (o.summary.as_mut(), bases.get(&(o.setting.clone(), o.seed))) {
            s.set_speedups(b);
        }
    }
}

/// Targets over all runs, as sortable keys.
fn all_targets(outcomes: &[Outcome]) -> Vec<f64> {
    let set: BTreeSet<u64> = outcomes
        .iter()
        .filter_map(|o| o.summary.as_ref())
        .flat_map(|s| s.targets.iter().map(|t| t.target.to_bits()))
        .collect();
    let mut ts: Vec<f64> = set.into_iter().map(f64::from_bits).collect();
    ts.sort_by(f64::total_cmp);
    ts
}

fn write_table_csv(path: &Path, outcomes: &[Outcome]) -> feddrift::Result<()> {
    let targets = all_targets(outcomes);
    let mut text = String::from("setting,algorithm,seed,status,rounds,best_accuracy,final_accuracy");
    for t in &targets {
        write!(text, ",rounds_to_{t},speedup_{t}").unwrap();
    }
    text.push_str(",total_bytes\n");
    for o in outcomes {
        write!(text, "{},{},{}", o.setting, o.label, o.seed).unwrap();
        match &o.summary {
            None => {
                text.push_str(",failed,,,");
                text.push_str(&",".repeat(2 * targets.len() + 1));
            }
            Some(s) => {
                write!(text, ",ok,{},{},{}", s.rounds, s.best_accuracy, s.final_accuracy).unwrap();
                for t in &targets {
                    let r = s.targets.iter().find(|x| x.target == *t);
                    let rounds = r.and_then(|r| r.rounds).map(|v| v.to_string()).unwrap_or_default();
                    let sp = r
                        .and_then(|r| r.speedup_vs_baseline)
                        .map(|v| format!("{}{}", if v.lower_bound { ">=" } else { "" }, v.value))
                        .unwrap_or_default();
                    write!(text, ",{rounds},{sp}").unwrap();
                }
                write!(text, ",{}", s.total_bytes_up + s.total_bytes_down).unwrap();
            }
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| feddrift::Error::Io { path: path.into(), source: e })
}

/// Median of round counts where "not reached" sorts last.
fn median_rounds(values: &[Option<usize>]) -> Option<usize> {
    let mut v: Vec<usize> = values.iter().map(|r| r.unwrap_or(usize::MAX)).collect();
    v.sort_unstable();
    let m = v[(v.len() - 1) / 2];
    (m != usize::MAX).then_some(m)
}

fn table_markdown(outcomes: &[Outcome], baseline: &str) -> String {
    let targets = all_targets(outcomes);
    let mut settings: Vec<&str> = Vec::new();
    for o in outcomes {
        if !settings.contains(&o.setting.as_str()) {
            settings.push(&o.setting);
        }
    }
    let mut md = String::new();
    for setting in settings {
        writeln!(md, "## {setting}\n").unwrap();
        let mut header = String::from("| algorithm | seeds | best acc (%) |");
        let mut rule = String::from("|---|---|---|");
        for t in &targets {
            write!(header, " R#@{:.0}% | S@{:.0}% |", t * 100.0, t * 100.0).unwrap();
            rule.push_str("---|---|");
        }
        writeln!(md, "{header}\n{rule}").unwrap();

        let mut labels: Vec<&str> = Vec::new();
        for o in outcomes.iter().filter(|o| o.setting == setting) {
            if !labels.contains(&o.label.as_str()) {
                labels.push(&o.label);
            }
        }
        let medians = |label: &str| -> (Vec<f64>, Vec<Option<usize>>, usize) {
            let runs: Vec<&RunSummary> = outcomes
                .iter()
                .filter(|o| o.setting == setting && o.label == label)
                .filter_map(|o| o.summary.as_ref())
                .collect();
            let accs = runs.iter().map(|s| s.best_accuracy).collect();
            let budget = runs.iter().map(|s| s.rounds).max().unwrap_or(0);
            let rounds = targets
                .iter()
                .map(|t| {
                    let per_seed: Vec<Option<usize>> = runs
                        .iter()
                        .map(|s| s.targets.iter().find(|x| x.target == *t).and_then(|x| x.rounds))
                        .collect();
                    if per_seed.is_empty() { None } else { median_rounds(&per_seed) }
                })
                .collect();
            (accs, rounds, budget)
        };
        let (base_accs, base_rounds, base_budget) = medians(baseline);
        for label in labels {
            let (accs, rounds, budget) = medians(label);
            let acc = if accs.is_empty() {
                "failed".to_string()
            } else {
                let n = accs.len() as f64;
                let mean = accs.iter().sum::<f64>() / n;
                let sd = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
                format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * sd)
            };
            write!(md, "| {label} | {} | {acc} |", accs.len()).unwrap();
            for (r, b) in rounds.iter().zip(&base_rounds) {
                let r_text = r.map(|v| v.to_string()).unwrap_or_else(|| format!(">{budget}"));
                let s_text = match (b, r) {
                    _ if base_accs.is_empty() => "-".to_string(),
                    (_, None) => "-".to_string(),
                    (Some(b), Some(r)) => format!("{:.2}x", *b as f64 / *r as f64),
                    (None, Some(r)) => format!(">{:.2}x", base_budget as f64 / *r as f64),
                };
                write!(md, " {r_text} | {s_text} |").unwrap();
            }
            md.push('\n');
        }
        md.push('\n');
    }
    md
}
