use std::path::Path;
use std::process::{Command, Output};

fn feddrift(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_feddrift"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const MINIMAL: &str = r#"{
  "dataset": {"kind": "synthetic", "n_clients": 3, "samples_per_client": 20},
  "algorithm": {"name": "feddc"},
  "rounds": 3
}"#;

#[test]
fn run_writes_documented_csv_header_and_applies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), MINIMAL).unwrap();
    let out = feddrift(&["run", "cfg.json", "--out", "o", "-q"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("o/records.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "round,algorithm,dataset,seed,test_accuracy,train_loss,bytes_up,bytes_down,grad_variance,wall_ms"
    );
    assert_eq!(csv.lines().count(), 4);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["algorithm"], "feddc");
    let config: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/config.json")).unwrap()).unwrap();
    assert_eq!(config["algo"]["algorithm"]["alpha"], 0.005);
}

#[test]
fn unknown_field_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let bad = MINIMAL.replace(r#""name": "feddc""#, r#""name": "feddc", "alpha_": 0.1"#);
    std::fs::write(dir.path().join("cfg.json"), bad).unwrap();
    let out = feddrift(&["run", "cfg.json", "-q"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("alpha_"), "{}", stderr(&out));
    assert!(stderr(&out).contains("algorithm"), "{}", stderr(&out));
}

#[test]
fn flags_override_file_values() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), MINIMAL).unwrap();
    let out = feddrift(
        &["run", "cfg.json", "--rounds", "2", "--seed", "5", "--algorithm", "fedavg", "--out", "o", "-q"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("o/records.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("1,fedavg,"));
    assert!(csv.contains(",5,"));
}

#[test]
fn list_presets_names_the_settings() {
    let dir = tempfile::tempdir().unwrap();
    let out = feddrift(&["run", "--list-presets"], dir.path());
    assert!(out.status.success());
    let text = stdout(&out);
    for name in ["synthetic-00", "synthetic-10", "synthetic-01", "mnist-iid", "mnist-d1", "mnist-d2", "unbalanced-0.3"] {
        assert!(text.contains(name), "{name} missing");
    }
}

#[test]
fn reruns_are_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), MINIMAL).unwrap();
    for o in ["a", "b"] {
        let out = feddrift(&["run", "cfg.json", "--out", o, "-q"], dir.path());
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for f in ["records.csv", "summary.json", "config.json"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn checkpoint_and_resume_match_a_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), MINIMAL).unwrap();
    let run = |args: &[&str]| {
        let out = feddrift(args, dir.path());
        assert!(out.status.success(), "{}", stderr(&out));
    };
    run(&["run", "cfg.json", "--rounds", "4", "--out", "full", "-q"]);
    run(&["run", "cfg.json", "--rounds", "2", "--out", "half", "--checkpoint", "c.ckpt", "-q"]);
    run(&["run", "cfg.json", "--rounds", "4", "--out", "resumed", "--resume", "c.ckpt", "-q"]);
    assert_eq!(
        std::fs::read(dir.path().join("full/records.csv")).unwrap(),
        std::fs::read(dir.path().join("resumed/records.csv")).unwrap()
    );
}

#[test]
fn sweep_tabulates_every_run() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = r#"{
      "output_dir": "sw",
      "settings": [{"name": "tiny", "config": {"dataset": {"kind": "synthetic", "n_clients": 3, "samples_per_client": 20}, "rounds": 3}}],
      "algorithms": ["fedavg", "fedprox", "scaffold", "feddyn", "feddc"],
      "seeds": [0]
    }"#;
    std::fs::write(dir.path().join("m.json"), manifest).unwrap();
    let out = feddrift(&["sweep", "m.json"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let table = std::fs::read_to_string(dir.path().join("sw/table.csv")).unwrap();
    assert_eq!(table.lines().count(), 6);
    assert!(table.lines().next().unwrap().starts_with("setting,algorithm,seed,status"));
    assert!(dir.path().join("sw/table.md").exists());
    assert!(dir.path().join("sw/tiny/feddc/seed-0/records.csv").exists());
}

#[test]
fn sweep_without_baseline_leaves_speedups_blank() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = r#"{
      "output_dir": "sw",
      "settings": [{"name": "tiny", "config": {"dataset": {"kind": "synthetic", "n_clients": 3, "samples_per_client": 20}, "rounds": 3, "targets": [0.1]}}],
      "algorithms": ["feddc"]
    }"#;
    std::fs::write(dir.path().join("m.json"), manifest).unwrap();
    let out = feddrift(&["sweep", "m.json"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let md = std::fs::read_to_string(dir.path().join("sw/table.md")).unwrap();
    let row = md.lines().find(|l| l.starts_with("| feddc |")).unwrap();
    assert!(row.ends_with("| - |"), "{row}");
}

#[test]
fn sweep_rejects_empty_and_duplicate_manifests() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.json"), r#"{"settings": [], "algorithms": []}"#).unwrap();
    let out = feddrift(&["sweep", "empty.json"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));

    let dup = r#"{"settings": ["synthetic-00"], "algorithms": ["feddc", "FedDC"], "seeds": [1]}"#;
    std::fs::write(dir.path().join("dup.json"), dup).unwrap();
    let out = feddrift(&["sweep", "dup.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("duplicate") && err.contains("feddc") && err.contains("synthetic-00"), "{err}");
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let out = feddrift(&["gradcheck", "--model", "logistic", "--input-dim", "30", "--classes", "5"], dir.path());
    assert!(out.status.success(), "{}{}", stdout(&out), stderr(&out));
    let out = feddrift(
        &["gradcheck", "--model", "mlp", "--input-dim", "20", "--hidden", "8", "--classes", "3"],
        dir.path(),
    );
    assert!(out.status.success(), "{}{}", stdout(&out), stderr(&out));
    assert!(stdout(&out).contains("FedDC objective"));
    let out = feddrift(&["gradcheck", "--corrupt"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}
