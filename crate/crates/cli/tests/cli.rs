use std::path::Path;
use std::process::{Command, Output};

use samsa_core::tensor::checkpoint;

fn samsa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_samsa"))
        .args(args)
        .env("SAMSA_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(
        &path,
        "[task]\nsize = 16\nvocab = 4\ntrain = 64\nval = 32\ntest = 32\n\
         [model]\nd_model = 16\nn_heads = 2\nk = 4\nd_ffn = 16\n\
         [train]\nsteps = 6\nbatch_size = 4\nwarmup = 2\neval_every = 3\nlog_every = 1\n",
    )
    .unwrap();
    path
}

fn train_tiny(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let cfg = tiny_config(dir);
    let out = dir.join(out);
    let mut args = vec![
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    samsa(&args)
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn train_writes_artifacts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = train_tiny(
            dir.path(),
            out,
            &["--mode", "hard", "--k", "4", "--seed", "7"],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = dir.path().join("a");
    for f in [
        "config.toml",
        "metrics.csv",
        "summary.json",
        "timing.json",
        "model.ckpt",
    ] {
        assert!(a.join(f).exists(), "missing {f}");
    }
    assert_eq!(
        read(a.join("summary.json")),
        read(dir.path().join("b/summary.json"))
    );
    let summary: serde_json::Value = serde_json::from_str(&read(a.join("summary.json"))).unwrap();
    assert_eq!(summary["seed"], 7);
    assert!(summary["val_acc"].is_number());
    let metrics = read(a.join("metrics.csv"));
    assert!(metrics.starts_with("step,split,loss,metric,lr,wall_ms,tokens_per_sec"));
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_tiny(
        dir.path(),
        "first",
        &["--seed", "3", "--set", "model.mode=soft"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let echo = dir.path().join("first/config.toml");
    let again = dir.path().join("again");
    let o = samsa(&[
        "train",
        "--config",
        echo.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        read(dir.path().join("first/summary.json")),
        read(again.join("summary.json"))
    );
}

#[test]
fn zero_learning_rate_keeps_initial_weights() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_tiny(dir.path(), "run", &["--lr", "0", "--save-initial"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (_, initial) = checkpoint::load::<f32>(&dir.path().join("run/initial.ckpt")).unwrap();
    let (_, last) = checkpoint::load::<f32>(&dir.path().join("run/model.ckpt")).unwrap();
    assert_eq!(initial.len(), last.len());
    for ((n0, a0), (n1, a1)) in initial.iter().zip(&last) {
        assert_eq!(n0, n1);
        assert_eq!(a0.data(), a1.data(), "{n0} changed");
    }
}

#[test]
fn unknown_keys_exit_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[model]\nheads = 4\n").unwrap();
    let o = samsa(&["train", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.heads"));

    let o = samsa(&["train", "--set", "train.learning_rate=0.1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.learning_rate"));

    let o = Command::new(env!("CARGO_BIN_EXE_samsa"))
        .args(["train"])
        .env("SAMSA_MODEL_KAY", "3")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("SAMSA_MODEL_KAY"));
}

#[test]
fn environment_overrides_file_and_flags_override_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("env");
    let o = Command::new(env!("CARGO_BIN_EXE_samsa"))
        .args([
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--k",
            "3",
        ])
        .env("SAMSA_LOG", "warn")
        .env("SAMSA_TRAIN_STEPS", "2")
        .env("SAMSA_MODEL_K", "5")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let echo: toml::Table = toml::from_str(&read(out.join("config.toml"))).unwrap();
    assert_eq!(echo["train"]["steps"].as_integer(), Some(2));
    assert_eq!(echo["model"]["k"].as_integer(), Some(3));
}

#[test]
fn divergence_exits_with_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_tiny(
        dir.path(),
        "boom",
        &["--lr", "1e30", "--set", "train.clip_norm=1e30"],
    );
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn eval_and_inspect_read_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_tiny(dir.path(), "run", &["--precision", "64"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = dir.path().join("run/model.ckpt");

    let o = samsa(&["eval", ckpt.to_str().unwrap(), "--split", "val"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["count"], 32);
    assert_eq!(report["precision"], 64);
    let summary: serde_json::Value =
        serde_json::from_str(&read(dir.path().join("run/summary.json"))).unwrap();
    assert_eq!(report["metric"], summary["val_metric"]);

    let o = samsa(&["inspect-checkpoint", ckpt.to_str().unwrap()]);
    assert!(o.status.success());
    let header: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(header["dtype"], "f64");
    assert!(header["num_params"].as_u64().unwrap() > 0);
    assert_eq!(header["meta"]["model"]["layer"]["k"], 4);
}

#[test]
fn gradcheck_sampler_soft_passes() {
    let o = samsa(&[
        "gradcheck",
        "--target",
        "sampler-soft",
        "--n",
        "16",
        "--k",
        "4",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["reports"][0]["max_rel_err"].as_f64().unwrap() < 1e-4);

    let o = samsa(&["gradcheck", "--precision", "32"]);
    assert_eq!(o.status.code(), Some(2));
    let o = samsa(&["gradcheck", "--target", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oracle_agrees_on_all_instances() {
    let o = samsa(&["oracle", "--n-max", "12", "--k-max", "6", "--trials", "500"]);
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["agreements"], 500);
    let o = samsa(&[
        "oracle",
        "--trials",
        "50",
        "--precision",
        "32",
        "--seed",
        "4",
    ]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn bench_prints_ratio_table() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("bench.json");
    let o = samsa(&[
        "bench",
        "--n",
        "64,128",
        "--k",
        "8",
        "--modes",
        "hard,soft",
        "--compare",
        "full",
        "--repeats",
        "1",
        "--out",
        json.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("full / samsa-hard"));
    assert!(table.contains("samsa-soft / samsa-hard"));
    let report: serde_json::Value = serde_json::from_str(&read(&json)).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 6);
    assert_eq!(report["ratios"].as_array().unwrap().len(), 4);
}

#[test]
fn help_lists_every_config_key() {
    let o = samsa(&["--help"]);
    assert!(o.status.success());
    let help = String::from_utf8_lossy(&o.stdout);
    for key in [
        "model.k",
        "model.tau",
        "model.locality",
        "train.lr",
        "train.stop_at",
        "task.kind",
        "run.precision",
    ] {
        assert!(help.contains(key), "{key} missing from --help");
    }
}
