//! Black-box tests of the `mcsd` binary.

use std::path::Path;
use std::process::{Command, Output};

use mcsd_core::data::load_csv;
use mcsd_core::train::deterministic_error;
use mcsd_core::Checkpoint;
use serde_json::Value;

fn mcsd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcsd"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn mcsd")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = mcsd(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const DET_TRAIN: &str = r#"{"data": {"generate": {"dataset": {"kind": "moons", "n": 200, "noise": 0.3}, "seed": 1,
    "split": {"train_frac": 0.6, "val_frac": 0.2, "test_frac": 0.2, "seed": 1}}},
    "network": {"hidden_dim": 8, "num_blocks": 3}, "training": {"epochs": 8, "regime": "DET"}}"#;

/// Trains a small DET model on generated moons into `model/`.
fn trained(dir: &Path) {
    std::fs::write(dir.join("train.json"), DET_TRAIN).unwrap();
    ok(dir, &["train", "--config", "train.json", "--out", "model"]);
}

#[test]
fn missing_config_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = mcsd(dir.path(), &["train", "--config", "absent.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("absent.json"));
}

#[test]
fn missing_checkpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = mcsd(dir.path(), &["eval", "--checkpoint", "none.json", "--data", "none.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_named_in_the_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"training": {"epochs": 3, "learning_rate": 0.1}}"#).unwrap();
    let out = mcsd(dir.path(), &["train", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("learning_rate"), "{}", stderr(&out));
}

#[test]
fn invalid_values_are_rejected_before_training() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"training": {"q_final": 1.5, "regime": "MCSD"}}"#).unwrap();
    let out = mcsd(dir.path(), &["train", "--config", "bad.json", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("o/checkpoint.json").exists());
}

#[test]
fn unsupported_format_version_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("v.json"), r#"{"format_version": 99}"#).unwrap();
    assert_eq!(mcsd(dir.path(), &["grad-check", "--config", "v.json"]).status.code(), Some(2));
}

#[test]
fn det_train_writes_checkpoint_and_report() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let model = dir.path().join("model");
    assert!(model.join("checkpoint.json").exists());
    let report = json(model.join("report.json"));
    assert_eq!(report["format_version"], 1);
    assert_eq!(report["command"], "train");
    assert_eq!(report["config"]["training"]["regime"], "DET");
    assert_eq!(report["train"]["epoch_loss"].as_array().unwrap().len(), 8);
    assert!(report["test"]["ece"].is_number());
    for f in ["train.csv", "val.csv", "test.csv", "train.meta.json"] {
        assert!(model.join(f).exists(), "{f}");
    }
    Checkpoint::load(model.join("checkpoint.json")).unwrap().to_net().unwrap();
}

#[test]
fn identical_runs_give_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("train.json"), DET_TRAIN).unwrap();
    ok(dir.path(), &["train", "--config", "train.json", "--out", "a", "--regime", "MCSD"]);
    ok(dir.path(), &["train", "--config", "train.json", "--out", "b", "--regime", "MCSD"]);
    for f in ["checkpoint.json", "report.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    ok(dir.path(), &["train", "--config", "train.json", "--out", "c", "--regime", "MCSD", "--seed", "9"]);
    assert_ne!(
        std::fs::read(dir.path().join("a/checkpoint.json")).unwrap(),
        std::fs::read(dir.path().join("c/checkpoint.json")).unwrap()
    );
}

#[test]
fn progress_streams_one_json_line_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("train.json"), DET_TRAIN).unwrap();
    let out = ok(dir.path(), &["train", "--config", "train.json", "--out", "m", "--progress"]);
    let lines: Vec<Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 8);
    assert_eq!(lines[0]["event"], "epoch");
    assert_eq!(lines[7]["epoch"], 7);
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"network": {"hidden_dim": 8, "num_blocks": 2, "use_batchnorm": false},
        "training": {"lr": 1e30, "epochs": 5, "regime": "DET", "step_decay": false}}"#;
    std::fs::write(dir.path().join("t.json"), cfg).unwrap();
    let out = mcsd(dir.path(), &["train", "--config", "t.json", "--out", "o"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("diverged"));
}

#[test]
fn eval_single_det_pass_matches_plain_forward() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    ok(
        dir.path(),
        &["eval", "--checkpoint", "model/checkpoint.json", "--data", "model/test.csv", "--regime", "DET", "-T", "1", "--out", "ev"],
    );
    let report = json(dir.path().join("ev/report.json"));
    let ckpt = Checkpoint::load(dir.path().join("model/checkpoint.json")).unwrap();
    let net = ckpt.to_net().unwrap();
    let mut ds = load_csv(dir.path().join("model/test.csv")).unwrap();
    ds.features = ckpt.prepare_inputs(&ds.features).unwrap();
    let expected = deterministic_error(&net, &ds).unwrap();
    assert_eq!(report["report"]["test_error"].as_f64().unwrap(), expected);
    assert_eq!(report["report"]["num_passes"], 1);
}

#[test]
fn eval_defaults_and_regime_warning() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let out = ok(
        dir.path(),
        &["eval", "--checkpoint", "model/checkpoint.json", "--data", "model/test.csv", "--regime", "MCDO", "--out", "ev"],
    );
    assert!(stderr(&out).contains("warning"));
    let report = json(dir.path().join("ev/report.json"));
    assert_eq!(report["config"]["passes"], 50);
    assert_eq!(report["config"]["bins"], 10);
    assert_eq!(report["report"]["bins"].as_array().unwrap().len(), 10);
    assert_eq!(report["warnings"].as_array().unwrap().len(), 1);
    let csv = std::fs::read_to_string(dir.path().join("ev/reliability.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn ood_on_its_own_data_gives_identical_cdfs() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    ok(
        dir.path(),
        &["ood", "--checkpoint", "model/checkpoint.json", "--data", "model/test.csv", "--ood-data", "model/test.csv", "--out", "o"],
    );
    let a = std::fs::read(dir.path().join("o/in_cdf.csv")).unwrap();
    let b = std::fs::read(dir.path().join("o/ood_cdf.csv")).unwrap();
    assert_eq!(a, b);
    let s = json(dir.path().join("o/summary.json"));
    assert_eq!(s["in_distribution"]["mean_entropy"], s["out_of_distribution"]["mean_entropy"]);
}

#[test]
fn ood_dimension_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    std::fs::write(dir.path().join("wide.csv"), "f0,f1,f2,label\n0,0,0,0\n1,1,1,1\n").unwrap();
    let out = mcsd(
        dir.path(),
        &["ood", "--checkpoint", "model/checkpoint.json", "--data", "model/test.csv", "--ood-data", "wide.csv", "--out", "o"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("dimension mismatch"));
}

fn pairs_csv(rows: &[[f64; 4]]) -> String {
    let mut s = String::from("a0,a1,b0,b1\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r[0], r[1], r[2], r[3]));
    }
    s
}

#[test]
fn verify_boundary_blends_match_swapped_pairs() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let rows = [[0.1, 0.9, -1.0, 0.2], [1.5, -0.3, 0.4, 0.4], [-0.7, -0.7, 1.1, 0.0]];
    let swapped: Vec<[f64; 4]> = rows.iter().map(|r| [r[2], r[3], r[0], r[1]]).collect();
    let impostors = [[0.0, 1.0, 1.0, 0.0], [-1.0, 0.5, 1.0, -0.5], [0.3, 0.3, -0.3, -0.3], [2.0, 0.0, 0.0, 2.0]];
    std::fs::write(dir.path().join("pairs.csv"), pairs_csv(&rows)).unwrap();
    std::fs::write(dir.path().join("swapped.csv"), pairs_csv(&swapped)).unwrap();
    std::fs::write(dir.path().join("imp.csv"), pairs_csv(&impostors)).unwrap();
    let common = ["--checkpoint", "model/checkpoint.json", "--impostors", "imp.csv", "--regime", "MCSD", "-T", "20"];
    let mut a: Vec<&str> = vec!["verify", "--pairs", "pairs.csv", "--alphas", "0,1", "--out", "va"];
    a.extend(common);
    let mut b: Vec<&str> = vec!["verify", "--pairs", "swapped.csv", "--alphas", "1,0", "--out", "vb"];
    b.extend(common);
    ok(dir.path(), &a);
    ok(dir.path(), &b);
    let pa = json(dir.path().join("va/summary.json"))["points"].clone();
    let pb = json(dir.path().join("vb/summary.json"))["points"].clone();
    // alpha = 0 on the original pairs is the same template as alpha = 1 on the swapped ones.
    for (x, y) in [(0, 0), (1, 1)] {
        let (p, q) = (&pa[x], &pb[y]);
        assert_eq!(p["attack_success_rate"], q["attack_success_rate"]);
        let (h1, h2) = (p["mean_entropy"].as_f64().unwrap(), q["mean_entropy"].as_f64().unwrap());
        assert!((h1 - h2).abs() < 1e-12, "{h1} vs {h2}");
    }
}

#[test]
fn verify_with_empty_impostor_set_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    std::fs::write(dir.path().join("pairs.csv"), pairs_csv(&[[0.0, 1.0, 1.0, 0.0]])).unwrap();
    std::fs::write(dir.path().join("imp.csv"), "a0,a1,b0,b1\n").unwrap();
    let out = mcsd(
        dir.path(),
        &["verify", "--checkpoint", "model/checkpoint.json", "--pairs", "pairs.csv", "--impostors", "imp.csv"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("impostor set is empty"));
}

#[test]
fn synthetic_verify_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let gen = r#"{"dataset": {"kind": "identities", "world": {}, "per_identity": 10}, "seed": 4}"#;
    let train = r#"{"data": {"files": {"train": "ids/data.csv"}}, "network": {"hidden_dim": 8, "num_blocks": 3},
        "training": {"epochs": 5, "regime": "MCSD"}}"#;
    std::fs::write(dir.path().join("gen.json"), gen).unwrap();
    std::fs::write(dir.path().join("train.json"), train).unwrap();
    std::fs::write(dir.path().join("v.json"), r#"{"synthetic": {"world_seed": 4, "impostor_pairs": 30, "morph_pairs": 6}}"#).unwrap();
    ok(dir.path(), &["gen-data", "--config", "gen.json", "--out", "ids"]);
    ok(dir.path(), &["train", "--config", "train.json", "--out", "m"]);
    let run = |out: &str, seed: &str| {
        ok(
            dir.path(),
            &["verify", "--config", "v.json", "--checkpoint", "m/checkpoint.json", "-T", "10", "--seed", seed, "--out", out],
        );
        std::fs::read(dir.path().join(out).join("trials.jsonl")).unwrap()
    };
    let a = run("a", "1");
    assert_eq!(a, run("b", "1"));
    assert_ne!(a, run("c", "2"));
    let s = json(dir.path().join("a/summary.json"));
    assert_eq!(s["config"]["far_target"], 0.001);
    assert!(s["calibration"]["realized_far"].as_f64().unwrap() <= 0.001);
    let sweep = std::fs::read_to_string(dir.path().join("a/morph_sweep.csv")).unwrap();
    assert_eq!(sweep.lines().next(), Some("alpha,attack_success_rate,mean_entropy"));
    assert_eq!(sweep.lines().count(), 12);
}

#[test]
fn gen_data_writes_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-data", "--out", "d", "--seed", "3"]);
    let meta = json(dir.path().join("d/train.meta.json"));
    assert_eq!(meta["d"], 2);
    assert_eq!(meta["C"], 2);
    assert_eq!(meta["seed"], 3);
    let summary = json(dir.path().join("d/gen_data.json"));
    assert_eq!(summary["command"], "gen-data");
    assert_eq!(summary["datasets"].as_array().unwrap().len(), 3);
}

#[test]
fn grad_check_passes_and_fails_on_zero_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["grad-check", "--out", "g"]);
    let r = json(dir.path().join("g/grad_check.json"));
    assert_eq!(r["passed"], true);
    assert!(r["max_rel_error"].as_f64().unwrap() < 1e-4);

    std::fs::write(dir.path().join("strict.json"), r#"{"tolerance": 0.0}"#).unwrap();
    let out = mcsd(dir.path(), &["grad-check", "--config", "strict.json", "--out", "g2"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(json(dir.path().join("g2/grad_check.json"))["passed"], false);
}
