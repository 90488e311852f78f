use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use samsa_core::attention::{AttentionConfig, AttentionKind};
use samsa_core::model::Model;
use samsa_core::sampler::SampleMode;
use samsa_core::tasks::{
    evaluate, train as run_training, Dataset, MetricsSink, Split, TaskKind, TaskSpec,
};
use samsa_core::tensor::checkpoint;
use samsa_core::verification::{
    complexity_probe, oracle_sweep, run_gradcheck, ComplexityReport, GradCheckSizes, GradTarget,
};
use samsa_core::{DType, Exec, Real};

use crate::config::{ConfigError, Layers, RunConfig};
use crate::{Common, Overrides, EXIT_CHECK};

fn precision(c: &Common) -> Option<u32> {
    c.precision
        .as_deref()
        .map(|p| p.parse().expect("clap restricts values"))
}

pub fn resolve(o: &Overrides, c: &Common) -> Result<RunConfig, ConfigError> {
    let mut layers = Layers::new();
    if let Some(path) = &o.config {
        layers.apply_file(path)?;
    }
    layers.apply_env(std::env::vars())?;
    for assignment in &o.set {
        layers.apply_assignment(assignment)?;
    }
    let shortcuts = [
        ("run.seed", c.seed.map(|v| v.to_string())),
        ("run.precision", c.precision.clone()),
        (
            "run.out_dir",
            o.out
                .as_ref()
                .map(|p| format!("{:?}", p.display().to_string())),
        ),
        ("task.kind", o.task.clone()),
        ("model.attention", o.attention.clone()),
        ("model.mode", o.mode.clone()),
        ("model.k", o.k.map(|v| v.to_string())),
        ("train.steps", o.steps.map(|v| v.to_string())),
        ("train.lr", o.lr.map(|v| format!("{v:?}"))),
        ("train.batch_size", o.batch_size.map(|v| v.to_string())),
    ];
    for (key, value) in shortcuts {
        if let Some(v) = value {
            layers.apply_flag(key, &v)?;
        }
    }
    layers.resolve()
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Deterministic outcome of a training run; timing lives in `timing.json`.
#[derive(Debug, Serialize)]
struct Summary {
    task: TaskKind,
    attention: AttentionKind,
    mode: SampleMode,
    k: usize,
    precision: u32,
    seed: u64,
    num_params: usize,
    steps_run: usize,
    final_train_loss: f64,
    /// "accuracy" or "mae".
    metric: &'static str,
    val_loss: f64,
    val_metric: f64,
    best_val_metric: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    val_acc: Option<f64>,
    test_loss: f64,
    test_metric: f64,
    skipped_updates: usize,
}

pub fn train(o: &Overrides, c: &Common, save_initial: bool) -> Result<u8> {
    let cfg = resolve(o, c)?;
    let out = cfg.run.out_dir.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    let data = match &cfg.run.data_dir {
        Some(dir) => Dataset::load_or_generate(cfg.task, dir, cfg.train.exec)?,
        None => Dataset::generate(cfg.task, cfg.train.exec)?,
    };
    if cfg.run.precision == 64 {
        train_as::<f64>(&cfg, &data, &out, save_initial)
    } else {
        train_as::<f32>(&cfg, &data, &out, save_initial)
    }
}

fn train_as<T: Real>(
    cfg: &RunConfig,
    data: &Dataset,
    out: &Path,
    save_initial: bool,
) -> Result<u8> {
    let mut model = Model::<T>::new(cfg.model_config(), cfg.run.seed)?;
    let extra = serde_json::json!({ "task": cfg.task, "train": cfg.train });
    if save_initial {
        model.save(&out.join("initial.ckpt"), extra.clone())?;
    }
    log::info!(
        "training {:?} on {:?}: {} parameters, {}-bit",
        cfg.model.layer.attention,
        cfg.task.kind,
        model.num_params(),
        cfg.run.precision
    );
    let start = Instant::now();
    let mut sink = MetricsSink::csv(&out.join("metrics.csv"))?;
    let outcome = run_training(&mut model, data, &cfg.train, cfg.run.seed, &mut sink)?;
    let test = evaluate(&model, &data.test, cfg.run.seed, cfg.train.exec)?;
    model.save(&out.join("model.ckpt"), extra)?;

    let classification = cfg.task.num_classes().is_some();
    let summary = Summary {
        task: cfg.task.kind,
        attention: cfg.model.layer.attention,
        mode: cfg.model.layer.mode,
        k: cfg.model.layer.k,
        precision: cfg.run.precision,
        seed: cfg.run.seed,
        num_params: model.num_params(),
        steps_run: outcome.steps_run,
        final_train_loss: outcome.final_train_loss,
        metric: if classification { "accuracy" } else { "mae" },
        val_loss: outcome.val.loss,
        val_metric: outcome.val.metric,
        best_val_metric: outcome.best_val_metric,
        val_acc: classification.then_some(outcome.val.metric),
        test_loss: test.loss,
        test_metric: test.metric,
        skipped_updates: outcome.skipped_updates,
    };
    write_json(&out.join("summary.json"), &summary)?;
    let wall = start.elapsed().as_secs_f64();
    write_json(
        &out.join("timing.json"),
        &serde_json::json!({
            "wall_seconds": wall,
            "train_seconds": outcome.wall_seconds,
            "steps_per_second": outcome.steps_run as f64 / outcome.wall_seconds.max(1e-9),
        }),
    )?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(0)
}

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
    pub split: String,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn eval(a: &EvalArgs, c: &Common) -> Result<u8> {
    let header = checkpoint::read_header(&a.checkpoint)?;
    let spec: TaskSpec = serde_json::from_value(header.meta["extra"]["task"].clone())
        .map_err(|e| ConfigError(format!("checkpoint has no task spec: {e}")))?;
    let split = match a.split.as_str() {
        "train" => Split::Train,
        "val" => Split::Val,
        _ => Split::Test,
    };
    let count = match split {
        Split::Train => spec.train,
        Split::Val => spec.val,
        Split::Test => spec.test,
    };
    let samples = spec.generate_split(split, count, Exec::Parallel);
    let seed = c.seed.unwrap_or(header.seed);
    let bits = precision(c).unwrap_or(header.dtype.bits());
    let result = if bits == 64 {
        let (model, _) = Model::<f64>::load(&a.checkpoint)?;
        evaluate(&model, &samples, seed, Exec::Parallel)?
    } else {
        let (model, _) = Model::<f32>::load(&a.checkpoint)?;
        evaluate(&model, &samples, seed, Exec::Parallel)?
    };
    let report = serde_json::json!({
        "checkpoint": a.checkpoint,
        "task": spec.kind,
        "split": a.split,
        "precision": bits,
        "loss": result.loss,
        "metric": result.metric,
        "count": result.count,
    });
    if let Some(path) = &a.out {
        write_json(path, &report)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(0)
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// A target name or `all`.
    #[arg(long, default_value = "all")]
    pub target: String,
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// Row width of the sampled matrix.
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn gradcheck(a: &GradcheckArgs, c: &Common) -> Result<u8> {
    if precision(c) == Some(32) {
        bail!(ConfigError(
            "gradcheck runs at 64-bit precision only".into()
        ));
    }
    let targets: Vec<GradTarget> = if a.target == "all" {
        GradTarget::ALL.to_vec()
    } else {
        vec![a.target.parse()?]
    };
    let sizes = GradCheckSizes {
        n: a.n,
        k: a.k,
        d: a.d,
        tau: a.tau,
        seed: c.seed.unwrap_or(0),
    };
    let start = Instant::now();
    let reports = targets
        .into_iter()
        .map(|t| run_gradcheck(t, sizes))
        .collect::<samsa_core::Result<Vec<_>>>()?;
    let pass = reports.iter().all(|r| r.pass);
    let report = serde_json::json!({
        "pass": pass,
        "seconds": start.elapsed().as_secs_f64(),
        "sizes": sizes,
        "reports": reports,
    });
    if let Some(path) = &a.out {
        write_json(path, &report)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if pass { 0 } else { EXIT_CHECK })
}

#[derive(Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 12)]
    pub n_max: usize,
    #[arg(long, default_value_t = 6)]
    pub k_max: usize,
    #[arg(long, default_value_t = 500)]
    pub trials: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn oracle(a: &OracleArgs, c: &Common) -> Result<u8> {
    let seed = c.seed.unwrap_or(0);
    let report = if precision(c) == Some(32) {
        oracle_sweep::<f32>(a.n_max, a.k_max, a.trials, seed)?
    } else {
        oracle_sweep::<f64>(a.n_max, a.k_max, a.trials, seed)?
    };
    if let Some(path) = &a.out {
        write_json(path, &report)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    eprintln!("{}/{} instances agree", report.agreements, report.trials);
    Ok(if report.pass() { 0 } else { EXIT_CHECK })
}

#[derive(Args)]
pub struct BenchArgs {
    /// Sequence lengths.
    #[arg(long, value_delimiter = ',', default_values_t = [512, 1024, 2048, 4096])]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 128)]
    pub k: usize,
    /// Sampler modes to time.
    #[arg(long, value_delimiter = ',', default_values = ["hard"], value_parser = ["hard", "soft"])]
    pub modes: Vec<String>,
    /// Also time the full-attention layer (`full`).
    #[arg(long, value_parser = ["full"])]
    pub compare: Option<String>,
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Exit 4 unless full/hard time ratio at the largest n reaches this.
    #[arg(long)]
    pub min_ratio: Option<f64>,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct BenchRow {
    model: &'static str,
    n: usize,
    k: usize,
    mode: &'static str,
    median_ms: f64,
    attention_scores: u64,
}

#[derive(Debug, Serialize)]
struct BenchRatio {
    n: usize,
    numerator: &'static str,
    denominator: &'static str,
    ratio: f64,
}

fn probe(layer: AttentionConfig, a: &BenchArgs, seed: u64, bits: u32) -> Result<ComplexityReport> {
    Ok(if bits == 64 {
        complexity_probe::<f64>(layer, &a.n, a.repeats, seed)?
    } else {
        complexity_probe::<f32>(layer, &a.n, a.repeats, seed)?
    })
}

pub fn bench(a: &BenchArgs, c: &Common) -> Result<u8> {
    let seed = c.seed.unwrap_or(0);
    let bits = precision(c).unwrap_or(32);
    let base = AttentionConfig {
        d_model: a.d_model,
        n_heads: a.heads,
        k: a.k,
        d_ffn: 2 * a.d_model,
        ..Default::default()
    };
    base.validate()?;
    if a.n.len() < 2 {
        bail!(ConfigError("bench needs at least two values of --n".into()));
    }
    let mut runs: Vec<(&'static str, &'static str, ComplexityReport)> = Vec::new();
    for m in &a.modes {
        let (mode, name) = if m == "soft" {
            (SampleMode::Soft, "soft")
        } else {
            (SampleMode::Hard, "hard")
        };
        runs.push((
            "samsa",
            name,
            probe(AttentionConfig { mode, ..base }, a, seed, bits)?,
        ));
    }
    if a.compare.is_some() {
        let full = AttentionConfig {
            attention: AttentionKind::Full,
            ..base
        };
        runs.push(("full", "-", probe(full, a, seed, bits)?));
    }

    let mut rows = Vec::new();
    for (model, mode, r) in &runs {
        for row in &r.rows {
            rows.push(BenchRow {
                model,
                n: row.n,
                k: a.k,
                mode,
                median_ms: row.median_ms,
                attention_scores: row.attention_scores,
            });
        }
    }
    let time = |model: &str, mode: &str, n: usize| {
        rows.iter()
            .find(|r| r.model == model && r.mode == mode && r.n == n)
            .map(|r| r.median_ms)
    };
    let mut ratios = Vec::new();
    for &n in &a.n {
        if let (Some(h), Some(f)) = (time("samsa", "hard", n), time("full", "-", n)) {
            ratios.push(BenchRatio {
                n,
                numerator: "full",
                denominator: "samsa-hard",
                ratio: f / h,
            });
        }
        if let (Some(h), Some(s)) = (time("samsa", "hard", n), time("samsa", "soft", n)) {
            ratios.push(BenchRatio {
                n,
                numerator: "samsa-soft",
                denominator: "samsa-hard",
                ratio: s / h,
            });
        }
    }
    let exponents: Vec<_> = runs
        .iter()
        .map(|(model, mode, r)| serde_json::json!({ "model": model, "mode": mode, "exponent": r.exponent }))
        .collect();
    let report = serde_json::json!({
        "precision": bits,
        "d_model": a.d_model,
        "n_heads": a.heads,
        "repeats": a.repeats,
        "rows": rows,
        "ratios": ratios,
        "exponents": exponents,
    });
    if let Some(path) = &a.out {
        write_json(path, &report)?;
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", render_table(&report));
    }

    let largest = *a.n.iter().max().expect("two sizes");
    let headline = ratios
        .iter()
        .find(|r| r.n == largest && r.numerator == "full")
        .map(|r| r.ratio);
    match (a.min_ratio, headline) {
        (Some(min), Some(r)) if r < min => Ok(EXIT_CHECK),
        (Some(_), None) => bail!(ConfigError(
            "--min-ratio needs --compare full and --modes hard".into()
        )),
        _ => Ok(0),
    }
}

/// Human-readable view of a bench report.
fn render_table(report: &serde_json::Value) -> String {
    let mut s = format!(
        "{:<7} {:<5} {:>6} {:>5} {:>12}\n",
        "model", "mode", "n", "k", "median ms"
    );
    for r in report["rows"].as_array().into_iter().flatten() {
        s.push_str(&format!(
            "{:<7} {:<5} {:>6} {:>5} {:>12.3}\n",
            r["model"].as_str().unwrap_or(""),
            r["mode"].as_str().unwrap_or(""),
            r["n"],
            r["k"],
            r["median_ms"].as_f64().unwrap_or(f64::NAN)
        ));
    }
    let ratios = report["ratios"].as_array().cloned().unwrap_or_default();
    if !ratios.is_empty() {
        s.push_str(&format!("\n{:>6}  {:<24} {:>8}\n", "n", "ratio", "value"));
        for r in ratios {
            let label = format!(
                "{} / {}",
                r["numerator"].as_str().unwrap_or(""),
                r["denominator"].as_str().unwrap_or("")
            );
            s.push_str(&format!(
                "{:>6}  {:<24} {:>7.2}x\n",
                r["n"],
                label,
                r["ratio"].as_f64().unwrap_or(f64::NAN)
            ));
        }
    }
    s.push('\n');
    for e in report["exponents"].as_array().into_iter().flatten() {
        s.push_str(&format!(
            "time ~ n^{:.2} for {} {}\n",
            e["exponent"].as_f64().unwrap_or(f64::NAN),
            e["model"].as_str().unwrap_or(""),
            e["mode"].as_str().unwrap_or("")
        ));
    }
    s
}

pub fn inspect(path: &Path, c: &Common) -> Result<u8> {
    let header = checkpoint::read_header(path)?;
    let numel: usize = header
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>())
        .sum();
    let mut value = serde_json::to_value(&header)?;
    value["num_params"] = numel.into();
    if let Some(bits) = precision(c) {
        let stored = header.dtype.bits();
        value["stored_precision"] = stored.into();
        value["requested_precision"] = bits.into();
        if bits != stored {
            let bytes = numel * if bits == 64 { DType::F64 } else { DType::F32 }.size_of();
            value["converted_bytes"] = bytes.into();
        }
    }
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(0)
}
