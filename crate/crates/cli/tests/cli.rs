//! Command-line behaviour: exit codes, caching, provenance checks, locking.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use diffmia_cli::{Pipeline, RunConfig, Subset};

const TINY: &str = r#"
[dataset]
kind = "mix"
n = 120
dims = [1, 4, 4]
seed = 1
split_seed = 2
public_fraction = 0.5
members = 40

[diffusion]
T = 8
beta_start = 0.01
beta_end = 0.3
width = 8
depth = 1
embed_width = 4
init_seed = 3
train = { lr = 0.05, momentum = 0.9, batch_size = 8, steps = 20, seed = 4 }

[attack]
m = 3
master_seed = 0
trunk_params = [300]
grid = { lo = 0.01, hi = 0.5, points = 6 }
train = { lr = 0.01, momentum = 0.9, batch_size = 8, steps = 20, seed = 0 }

[eval]
fpr_targets = [0.1]
seeds = 2
repetitions = 2
ablation_m = [1, 3]
variance_alpha = 0.1
hist_bins = 8
significance = 0.01
interval_level = 0.95
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run(config: &Path, ws: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffmia"))
        .arg("--config")
        .arg(config)
        .arg("--workspace")
        .arg(ws)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn gen_data_creates_workspace_and_caches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let ws = dir.path().join("nested/ws");
    let first = run(&cfg, &ws, &["gen-data"]);
    assert!(first.status.success(), "{first:?}");
    assert!(stdout(&first).contains("computed"));
    let again = run(&cfg, &ws, &["gen-data"]);
    assert!(stdout(&again).contains("cache hit"));

    let changed = write_config(dir.path(), &TINY.replace("seed = 1\n", "seed = 5\n"));
    assert!(stdout(&run(&changed, &ws, &["gen-data"])).contains("computed"));
    assert_eq!(fs::read_dir(ws.join("data")).unwrap().count(), 2);
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    let typo = write_config(dir.path(), &TINY.replace("hist_bins", "hist_binz"));
    let o = run(&typo, &ws, &["gen-data"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hist_binz"));

    let cfg = write_config(dir.path(), TINY);
    assert_eq!(run(&cfg, &ws, &["train-dm", "--resume"]).status.code(), Some(1));
    assert_eq!(run(&dir.path().join("missing.toml"), &ws, &["gen-data"]).status.code(), Some(1));
}

#[test]
fn divergence_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TINY.replace("lr = 0.05,", "lr = 1e200,"));
    let o = run(&cfg, &dir.path().join("ws"), &["train-dm"]);
    assert_eq!(o.status.code(), Some(2), "{o:?}");
}

#[test]
fn locked_workspace_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let ws = dir.path().join("ws");
    fs::create_dir_all(&ws).unwrap();
    fs::write(ws.join(".lock"), "1").unwrap();
    assert_eq!(run(&cfg, &ws, &["gen-data"]).status.code(), Some(1));
    fs::remove_file(ws.join(".lock")).unwrap();
    assert!(run(&cfg, &ws, &["gen-data"]).status.success());
    assert!(!ws.join(".lock").exists());
}

#[test]
fn stale_provenance_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let ws = dir.path().join("ws");
    assert!(run(&cfg, &ws, &["train-dm"]).status.success());
    let model_dir = fs::read_dir(ws.join("models")).unwrap().next().unwrap().unwrap().path();
    let prov = model_dir.join("provenance.json");
    let text = fs::read_to_string(&prov).unwrap();
    let hash = model_dir.file_name().unwrap().to_str().unwrap().to_string();
    fs::write(&prov, text.replace(&hash, "0000000000000000")).unwrap();
    let checkpoint = fs::read(model_dir.join("checkpoint.json")).unwrap();

    let o = run(&cfg, &ws, &["score"]);
    assert_eq!(o.status.code(), Some(1), "{o:?}");
    assert!(String::from_utf8_lossy(&o.stderr).contains("stale"));
    assert_eq!(fs::read(model_dir.join("checkpoint.json")).unwrap(), checkpoint);

    let o = run(&cfg, &ws, &["--force", "score"]);
    assert!(o.status.success(), "{o:?}");
    assert!(fs::read_to_string(&prov).unwrap().contains(&hash));
}

#[test]
fn full_chain_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_toml(TINY).unwrap();
    let p = Pipeline::open(cfg.clone(), Some(dir.path()), false).unwrap();
    let scored = p.score(&[Subset::Public]).unwrap();
    assert!(!scored[0].cache_hit);
    assert!(p.score(&[Subset::Public]).unwrap()[0].cache_hit);
    assert!(!p.score(&Subset::ALL).unwrap()[0].cache_hit);

    p.attack().unwrap();
    let decisions = fs::read_to_string(p.attack_dir().join("decisions.csv")).unwrap();
    let split = p.load_split().unwrap();
    assert_eq!(decisions.lines().count(), 1 + split.members.len() + split.holdout.len());
    assert!(decisions.starts_with("id,set,score,votes@0.01,in@0.01"));

    let report = p.evaluate().unwrap();
    for attack in ["marginal", "single", "bag"] {
        assert!(report.tpr(attack, 0.1).is_some(), "{attack} row missing");
    }
    let dir_e = p.report_dir().join("evaluate");
    for f in ["tpr_at_fpr.csv", "roc.csv", "calibration.csv", "histogram.csv", "summary.json", "roc.svg"] {
        assert!(dir_e.join(f).exists(), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(dir_e.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["schema_version"], 1);

    let ab = p.ablate().unwrap();
    // One row per (m, trunk, fpr).
    assert_eq!(ab.sweep.len(), 2);
    let bench = p.bench_prep().unwrap();
    assert!(bench.scoring_seconds > 0.0 && bench.learning_seconds > 0.0);
    let table = fs::read_to_string(p.report_dir().join("bench/bench.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn zero_steps_saves_the_initialisation() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace("steps = 20, seed = 4", "steps = 0, seed = 4");
    let cfg = RunConfig::from_toml(&text).unwrap();
    let p = Pipeline::open(cfg.clone(), Some(dir.path()), false).unwrap();
    let (model, _) = p.load_model().unwrap();
    let fresh = diffmia::diffusion::DiffusionModel::new(&cfg.diffusion.model(), 16, cfg.diffusion.init_seed).unwrap();
    assert_eq!(model.eps_net().params(), fresh.eps_net().params());
}
