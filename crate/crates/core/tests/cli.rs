use std::path::Path;
use std::process::{Command, Output};

fn napinn(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_napinn"))
        .args(args)
        .env("NAPINN_OUT", out_root)
        .output()
        .expect("spawn napinn")
}

fn stdout_dir(o: &Output) -> std::path::PathBuf {
    String::from_utf8(o.stdout.clone()).unwrap().trim().into()
}

fn csv_rows(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(str::to_owned).collect()
}

#[test]
fn simulate_writes_trajectory_meta_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let o = napinn(
        &["simulate", "--t-end", "10", "--dt", "0.1", "--out", out.to_str().unwrap()],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("trajectory.csv"));
    assert_eq!(rows[0], "time,h1,h2,h3,h4,h5,h6,v1,v2,v3,v4,v5");
    assert_eq!(rows.len() - 1, 101);
    assert_eq!(rows[1].split(',').count(), 12);
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["termination"], "end_time");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["input_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn reruns_reproduce_artifacts_and_default_to_the_env_root() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["simulate", "--scenario", "../../scenarios/two_tank.cfg", "--t-end", "5"];
    let a = napinn(&args, tmp.path());
    let b = napinn(&args, tmp.path());
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let dir = stdout_dir(&a);
    assert_eq!(dir, stdout_dir(&b));
    assert!(dir.starts_with(tmp.path()));
    let first = std::fs::read(dir.join("trajectory.csv")).unwrap();
    let other = tmp.path().join("again");
    let mut with_out = args.to_vec();
    with_out.extend(["--out", other.to_str().unwrap()]);
    assert!(napinn(&with_out, tmp.path()).status.success());
    assert_eq!(first, std::fs::read(other.join("trajectory.csv")).unwrap());
}

#[test]
fn malformed_config_exits_1_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "n_tanks = 3\ntank_area = wide\n").unwrap();
    let out = tmp.path().join("never");
    let o = napinn(
        &["simulate", "--scenario", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    assert!(!out.exists());
    std::fs::write(&cfg, "n_tanks = 1\n").unwrap();
    let o = napinn(&["sensitivity", "--scenario", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 1);
}

#[test]
fn non_convergence_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = napinn(&["simulate", "--t-end", "1", "--max-iterations", "1"], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn sensitivity_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sens");
    let o = napinn(
        &[
            "sensitivity",
            "--scenario",
            "../../scenarios/two_tank.cfg",
            "--t-end",
            "60",
            "--jobs",
            "3",
            "--out",
            out.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["interphase_exchange_identical"], true);
    assert!(summary["no_form_wall_loss_velocity_ratio"].as_f64().unwrap() > 10.0);
    for case in summary["cases"].as_array().unwrap() {
        assert!(case["peak_height"].as_f64().unwrap() <= 2.0);
    }
    assert_eq!(
        std::fs::read(out.join("all_terms/trajectory.csv")).unwrap(),
        std::fs::read(out.join("no_interphase_exchange/trajectory.csv")).unwrap()
    );
}

fn tiny_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let p = dir.join("tiny.cfg");
    std::fs::write(
        &p,
        format!("end_time = 20\nn_collocation = 9\nepochs = 4\nhidden_layers = 2\nhidden_width = 5\ncheckpoint_interval = 2\n{extra}"),
    )
    .unwrap();
    p
}

#[test]
fn train_then_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    let run = tmp.path().join("run");
    let o = napinn(
        &[
            "train",
            "--preset",
            "napinn-2",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "5",
            "--out",
            run.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let hist = csv_rows(&run.join("loss_history.csv"));
    assert_eq!(hist[0], "epoch,total,momentum,continuity,lr");
    assert_eq!(hist.len(), 5);
    for k in 0..3 {
        assert!(run.join(format!("checkpoints/net_{k}.bin")).exists());
        assert!(run.join(format!("model/net_{k}.bin")).exists());
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);

    let cmp = tmp.path().join("cmp");
    let o = napinn(
        &["compare", "--model", run.to_str().unwrap(), "--out", cmp.to_str().unwrap()],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(cmp.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["grid"].as_array().unwrap().len(), 9);
    assert!(report["height_mae"].as_f64().unwrap() >= 0.0);
    let table = csv_rows(&cmp.join("table.csv"));
    assert!(table[1].starts_with("node_assigned,2,"));

    // a reference that stops short of the window is an input error
    let short = tmp.path().join("short");
    assert!(napinn(
        &["simulate", "--scenario", "../../scenarios/two_tank.cfg", "--t-end", "5", "--out", short.to_str().unwrap()],
        tmp.path()
    )
    .status
    .success());
    let o = napinn(
        &[
            "compare",
            "--model",
            run.to_str().unwrap(),
            "--reference",
            short.join("trajectory.csv").to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn preset_and_config_mode_conflict_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "mode = vanilla\n");
    let o = napinn(&["train", "--preset", "napinn-2", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 7"));
    let o = napinn(&["train", "--preset", "napinn-two"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn diverging_training_exits_3_with_partial_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "base_lr = 1e300\nlr_decay = 1.0\n");
    let run = tmp.path().join("run");
    let o = napinn(
        &["train", "--preset", "vanilla-2", "--config", cfg.to_str().unwrap(), "--epochs", "50", "--out", run.to_str().unwrap()],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epoch"));
    assert!(run.join("checkpoints/net_0.bin").exists());
    assert!(run.join("manifest.json").exists());
}
