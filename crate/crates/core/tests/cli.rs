// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;

use molsae::io::{read_labels, read_shard, write_labels, LabelMatrix, Provenance};
use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_molsae"))
}

fn fake_bridge() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/fake_bridge.py")
        .display()
        .to_string()
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
    p
}

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["molsae"];
    argv.extend_from_slice(args);
    molsae::cli::run(argv)
}

fn run_cmd(cmd: &str, config: &Path, out: &Path, threads: usize) -> i32 {
    run(&[
        cmd,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--threads",
        &threads.to_string(),
    ])
}

#[test]
fn missing_config_is_usage_error() {
    let out = bin().args(["train", "--out", "/tmp/x"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = bin().args(["frobnicate", "--config", "c.json", "--out", "o"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).to_lowercase().contains("usage"));
}

#[test]
fn help_exits_zero() {
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn config_errors_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let no_seed = write_config(dir.path(), "a.json", &json!({ "data": {} }));
    assert_eq!(run_cmd("train", &no_seed, &out, 1), 1);
    let unknown = write_config(dir.path(), "b.json", &json!({ "seed": 1, "dataa": {} }));
    assert_eq!(run_cmd("train", &unknown, &out, 1), 1);
    let no_train = write_config(dir.path(), "c.json", &json!({ "seed": 1 }));
    assert_eq!(run_cmd("train", &no_train, &out, 1), 1);
    assert_eq!(run_cmd("train", &dir.path().join("absent.json"), &out, 1), 1);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let shard = dir.path().join("bad.saev");
    std::fs::write(&shard, b"SAEV\x01\x00\x00\x00junk").unwrap();
    let cfg = write_config(dir.path(), "c.json", &json!({ "seed": 1, "data": { "train": "bad.saev" } }));
    assert_eq!(run_cmd("train", &cfg, &dir.path().join("out"), 1), 2);
    let cfg = write_config(dir.path(), "d.json", &json!({ "seed": 1, "data": { "train": "missing.saev" } }));
    assert_eq!(run_cmd("train", &cfg, &dir.path().join("out"), 1), 2);
}

#[test]
fn bridge_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("smiles.txt"), "CCO\nCCN\n").unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({
            "seed": 1,
            "data": { "smiles": "smiles.txt" },
            "bridge": { "command": ["python3", fake_bridge(), "--vocab", dir.path().join("smiles.txt"), "--fail-method", "embed"] }
        }),
    );
    assert_eq!(run_cmd("embed", &cfg, &dir.path().join("out"), 1), 3);
    let cfg = write_config(
        dir.path(),
        "d.json",
        &json!({ "seed": 1, "data": { "smiles": "smiles.txt" }, "bridge": { "command": ["/nonexistent/bridge"] } }),
    );
    assert_eq!(run_cmd("embed", &cfg, &dir.path().join("out"), 1), 3);
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = vec![];
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

struct Pipeline {
    dir: tempfile::TempDir,
}

impl Pipeline {
    fn data(&self) -> PathBuf {
        self.dir.path().join("data")
    }

    fn config(&self, extra: Value) -> PathBuf {
        let mut cfg = json!({
            "seed": 11,
            "data": {
                "smiles": "smiles.txt",
                "train": "data/embeddings.saev",
                "eval": "data/embeddings.saev",
                "checkpoint": "data/checkpoint.saec",
                "substructures": "data/substructures.sael",
                "descriptors": "data/descriptors.sael",
                "toxicity": "toxicity.sael"
            },
            "train": { "epochs": 20, "batch_size": 32, "expansion_factor": 2, "k": 3, "lr": 0.003, "dead_window": 2000, "log_every": 5 },
            "eval": { "expansions": [1, 2], "ks": [2, 4], "functional": true, "delta_loss": "bridge" },
            "probes": {
                "folds": 3,
                "smarts": [
                    { "name": "hydroxyl", "smarts": "O" },
                    { "name": "nitrile", "smarts": "C#N" },
                    { "name": "halogen", "smarts": "Cl" }
                ],
                "compute_descriptors": true,
                "pca_components": 4,
                "nmf_components": 3,
                "nmf_max_iter": 50,
                "redundancy_pairs": 50
            },
            "steering": { "max_molecules": 5, "batch_rows": 16 },
            "similarity": { "pilot_pairs": 2000, "n_pairs": 5000, "fingerprint": { "nbits": 256 }, "top_molecules": 4 },
            "bridge": {
                "command": ["python3", fake_bridge(), "--vocab", self.dir.path().join("smiles.txt"), "--radius", "0.8"]
            }
        });
        merge(&mut cfg, extra);
        write_config(self.dir.path(), "run.json", &cfg)
    }

    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut smiles = common::fake_bridge::vocabulary(120);
        smiles.insert(7, "CCXC".into());
        std::fs::write(dir.path().join("smiles.txt"), smiles.join("\n") + "\n").unwrap();
        let p = Pipeline { dir };
        let cfg = p.config(json!({}));
        assert_eq!(run_cmd("embed", &cfg, &p.data(), 2), 0);
        let (shard, manifest) = read_shard(&p.data().join("embeddings.saev")).unwrap();
        assert_eq!(shard.count(), 121);
        assert!(manifest.records[7].error.is_some());
        // Toxicity label: long molecules with a hydroxyl.
        let tox: Vec<bool> = manifest
            .records
            .iter()
            .map(|r| r.smiles.len() > 9 && r.smiles.contains('O'))
            .collect();
        let labels = LabelMatrix::binary(vec!["toxic".into()], Provenance::Toxicity, tox.len(), tox).unwrap();
        write_labels(&labels, &p.dir.path().join("toxicity.sael")).unwrap();
        assert_eq!(run_cmd("train", &cfg, &p.data(), 2), 0);
        p
    }
}

fn merge(base: &mut Value, extra: Value) {
    match (base, extra) {
        (Value::Object(b), Value::Object(e)) => {
            for (k, v) in e {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, e) => *b = e,
    }
}

#[test]
fn full_pipeline() {
    let p = Pipeline::new();
    let cfg = p.config(json!({}));
    let labels = read_labels(&p.data().join("substructures.sael")).unwrap();
    assert_eq!(labels.targets(), ["hydroxyl", "nitrile", "halogen"]);
    assert_eq!(read_labels(&p.data().join("descriptors.sael")).unwrap().n_targets(), 6);

    let out = p.dir.path().join("out");
    for cmd in [
        "sweep",
        "eval-fidelity",
        "landscape",
        "probe-substructures",
        "probe-descriptors",
        "probe-toxicity",
        "steer-features",
        "steer-neurons",
        "tanimoto-null",
        "export-plots",
    ] {
        assert_eq!(run_cmd(cmd, &cfg, &out, 2), 0, "{cmd} failed");
        assert!(out.join(molsae::cli::manifest_name(cmd)).exists());
    }

    let sweep = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 5);
    let fidelity: Value = serde_json::from_slice(&std::fs::read(out.join("fidelity.json")).unwrap()).unwrap();
    assert_eq!(fidelity["delta_loss_source"], "bridge");
    assert_eq!(fidelity["functional"]["total"], 120);

    let landscape = std::fs::read_to_string(out.join("plots/landscape.csv")).unwrap();
    assert_eq!(landscape.lines().next().unwrap(), "feature,frequency,mean_norm_act,cv");
    assert_eq!(landscape.lines().count() - 1, 16);
    let plot_sweep = std::fs::read_to_string(out.join("plots/sweep.csv")).unwrap();
    assert_eq!(plot_sweep.lines().next().unwrap(), "expansion,k,fve,delta_loss");
    assert_eq!(plot_sweep.lines().count(), 5);
    let scatter = std::fs::read_to_string(out.join("plots/steering_scatter.csv")).unwrap();
    assert!(scatter.contains("feature:") && scatter.contains("neuron:"));
    let hist = std::fs::read_to_string(out.join("plots/tanimoto_histogram.csv")).unwrap();
    let total: usize = hist.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 5000);

    let manifest: Value = serde_json::from_slice(&std::fs::read(out.join("run-sweep.json")).unwrap()).unwrap();
    assert_eq!(manifest["toolkit_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["seed"], 11);

    let outcomes = std::fs::read_to_string(out.join("feature_steering_outcomes.csv")).unwrap();
    assert!(outcomes.lines().skip(1).all(|l| !l.contains(",7,")), "error row must be excluded");
    let summary: Value = serde_json::from_slice(&std::fs::read(out.join("feature_steering_summary.json")).unwrap()).unwrap();
    assert!(summary["original"].as_u64().unwrap() > 0);
    assert!(summary["invalid"].as_u64().unwrap() + summary["steered"].as_u64().unwrap() > 0);
}

#[test]
fn export_names_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &json!({ "seed": 1, "data": { "plots": ["landscape", "tanimoto"] } }));
    let out = bin()
        .args(["export-plots", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("landscape.json") && err.contains("null.saen"), "{err}");
}

#[test]
fn outputs_are_deterministic_across_runs_and_threads() {
    let p = Pipeline::new();
    let cfg = p.config(json!({ "eval": { "functional": false, "delta_loss": "proxy" } }));
    let cmds = ["train", "probe-substructures", "probe-descriptors", "probe-toxicity"];
    let mut snapshots = vec![];
    for (i, threads) in [1usize, 4, 4].into_iter().enumerate() {
        let out = p.dir.path().join(format!("det{i}"));
        for cmd in cmds {
            assert_eq!(run_cmd(cmd, &cfg, &out, threads), 0, "{cmd}");
        }
        snapshots.push(read_dir_bytes(&out));
    }
    assert!(!snapshots[0].is_empty());
    assert_eq!(snapshots[0], snapshots[1]);
    assert_eq!(snapshots[1], snapshots[2]);
}

#[test]
fn seed_override_changes_training() {
    let p = Pipeline::new();
    let cfg = p.config(json!({}));
    let a = p.dir.path().join("a");
    let b = p.dir.path().join("b");
    assert_eq!(run_cmd("train", &cfg, &a, 1), 0);
    assert_eq!(
        run(&["train", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--seed", "12"]),
        0
    );
    assert_ne!(
        std::fs::read(a.join("checkpoint.saec")).unwrap(),
        std::fs::read(b.join("checkpoint.saec")).unwrap()
    );
    let ma: Value = serde_json::from_slice(&std::fs::read(a.join("run-train.json")).unwrap()).unwrap();
    let mb: Value = serde_json::from_slice(&std::fs::read(b.join("run-train.json")).unwrap()).unwrap();
    assert_ne!(ma["config_sha256"], mb["config_sha256"]);
    assert_eq!(mb["seed"], 12);
}

#[test]
fn steering_abort_writes_cursor_and_resumes() {
    let p = Pipeline::new();
    let failing = p.config(json!({
        "bridge": { "command": ["python3", fake_bridge(), "--vocab", p.dir.path().join("smiles.txt"), "--radius", "0.8", "--fail-after", "4"] }
    }));
    let out = p.dir.path().join("abort");
    assert_eq!(run_cmd("steer-neurons", &failing, &out, 1), 3);
    let cursor: Value = serde_json::from_slice(&std::fs::read(out.join("neuron_steering_cursor.json")).unwrap()).unwrap();
    let at = cursor["cursor"].as_u64().unwrap();
    assert!(at > 0 && at < 8, "cursor {at}");

    let full_out = p.dir.path().join("full");
    assert_eq!(run_cmd("steer-neurons", &p.config(json!({})), &full_out, 1), 0);
    let resumed_out = p.dir.path().join("resumed");
    assert_eq!(run_cmd("steer-neurons", &p.config(json!({ "steering": { "start": at } })), &resumed_out, 1), 0);
    let partial = std::fs::read_to_string(out.join("neuron_steering_outcomes.csv")).unwrap();
    let rest = std::fs::read_to_string(resumed_out.join("neuron_steering_outcomes.csv")).unwrap();
    let full = std::fs::read_to_string(full_out.join("neuron_steering_outcomes.csv")).unwrap();
    let stitched: String = partial.clone() + rest.split_once('\n').unwrap().1;
    assert_eq!(stitched, full);
}

#[test]
fn recorded_session_replays_without_process() {
    let p = Pipeline::new();
    let rec_out = p.dir.path().join("rec");
    let cfg = p.config(json!({ "bridge": { "record": true } }));
    assert_eq!(run_cmd("steer-features", &cfg, &rec_out, 1), 0);
    let transcript = rec_out.join("bridge_transcript.jsonl");
    assert!(transcript.exists());
    let replay_cfg = p.config(json!({ "bridge": { "command": [], "replay": transcript } }));
    let rep_out = p.dir.path().join("rep");
    assert_eq!(run_cmd("steer-features", &replay_cfg, &rep_out, 1), 0);
    for f in ["feature_steering_outcomes.csv", "feature_steering_summary.json"] {
        assert_eq!(std::fs::read(rec_out.join(f)).unwrap(), std::fs::read(rep_out.join(f)).unwrap(), "{f}");
    }
}
