use std::fs::File;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, AttentionKind};
use crate::error::{Error, Result};
use crate::gumbel::GumbelRng;
use crate::model::Model;
use crate::nn::ForwardCtx;
use crate::par::Exec;
use crate::real::Real;
use crate::tensor::optim::{cosine_warmup_lr, AdamWConfig, OptimizerState, StepOutcome};
use crate::tensor::{Array, Tensor};

use super::{Dataset, Sample, Target};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train = 0,
    Val = 1,
    Test = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: usize,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eval_every: usize,
    pub log_every: usize,
    /// Stop once validation accuracy reaches this value.
    pub stop_at: Option<f64>,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            lr: 1e-3,
            warmup: 200,
            weight_decay: 0.01,
            clip_norm: 2.0,
            beta1: 0.9,
            beta2: 0.999,
            eval_every: 100,
            log_every: 10,
            stop_at: None,
            exec: Exec::Parallel,
        }
    }
}

/// Default recipe for seq-select, chosen by pilot runs at `n = 256`.
pub fn seq_select_recipe() -> TrainConfig {
    TrainConfig {
        steps: 2000,
        lr: 1e-2,
        warmup: 20,
        eval_every: 50,
        stop_at: Some(0.99),
        ..TrainConfig::default()
    }
}

/// Layer settings paired with [`seq_select_recipe`]: `k = 32`, four heads,
/// no Gumbel noise inside the pairwise relaxation.
pub fn seq_select_layer(attention: AttentionKind) -> AttentionConfig {
    AttentionConfig {
        attention,
        d_model: 64,
        n_heads: 4,
        k: 32,
        d_ffn: 128,
        pair_noise: false,
        ..AttentionConfig::default()
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let non_negative = |v: f64| (0.0..).contains(&v);
        if !non_negative(self.lr)
            || !non_negative(self.weight_decay)
            || self.clip_norm.is_nan()
            || self.clip_norm <= 0.0
        {
            return Err(Error::Config(
                "lr and weight_decay must be non-negative and clip_norm positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
            weight_decay: self.weight_decay,
            clip_norm: Some(self.clip_norm),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub split: Split,
    pub loss: f64,
    /// Accuracy for classification, mean absolute error for regression.
    pub metric: f64,
    pub lr: f64,
    pub wall_ms: f64,
    pub tokens_per_sec: f64,
}

/// Collects records and optionally streams them to a CSV file.
pub struct MetricsSink {
    writer: Option<csv::Writer<File>>,
    pub records: Vec<MetricsRecord>,
}

impl MetricsSink {
    pub fn memory() -> Self {
        Self {
            writer: None,
            records: Vec::new(),
        }
    }

    pub fn csv(path: &Path) -> Result<Self> {
        let writer = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
        Ok(Self {
            writer: Some(writer),
            records: Vec::new(),
        })
    }

    pub fn push(&mut self, r: MetricsRecord) -> Result<()> {
        if let Some(w) = &mut self.writer {
            w.serialize(r).map_err(|e| Error::Io(e.into()))?;
            w.flush()?;
        }
        self.records.push(r);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub loss: f64,
    pub metric: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub steps_run: usize,
    pub final_train_loss: f64,
    pub val: EvalResult,
    pub best_val_metric: f64,
    pub wall_seconds: f64,
    pub skipped_updates: usize,
}

/// Loss and per-sample score (1/0 hit for classes, absolute error for values).
fn sample_loss<T: Real>(out: &Tensor<T>, target: Target) -> Result<(Tensor<T>, f64)> {
    match target {
        Target::Class(c) => {
            let row = out.data();
            let pred = row
                .iter()
                .enumerate()
                .fold(0, |b, (i, v)| if *v > row[b] { i } else { b });
            Ok((out.cross_entropy(&[c])?, (pred == c) as u8 as f64))
        }
        Target::Value(v) => {
            let err = (out.data()[0].as_f64() - v).abs();
            Ok((out.smooth_l1(&Array::full(&[1, 1], T::of(v)))?, err))
        }
    }
}

/// Mean loss and metric over `samples`, noise off in the sampler; sample `i`
/// uses eval stream `i` of `seed` for graph encodings.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    samples: &[Sample],
    seed: u64,
    exec: Exec,
) -> Result<EvalResult> {
    if samples.is_empty() {
        return Err(Error::Config("cannot evaluate an empty split".into()));
    }
    let results = exec.map(samples.len(), |i| -> Result<(f64, f64)> {
        let p = model.store.bind(false);
        let mut ctx = ForwardCtx::eval(0);
        ctx.rng = GumbelRng::with_stream(seed, i as u64);
        let out = model.forward(&p, samples[i].model_input(), &mut ctx)?;
        let (loss, score) = sample_loss(&out, samples[i].target)?;
        Ok((loss.item().as_f64(), score))
    });
    let mut loss = 0.0;
    let mut metric = 0.0;
    for r in results {
        let (l, m) = r?;
        loss += l;
        metric += m;
    }
    let n = samples.len() as f64;
    Ok(EvalResult {
        loss: loss / n,
        metric: metric / n,
        count: samples.len(),
    })
}

/// Minibatch AdamW training. Every sample of a step is an independent graph;
/// their gradients are summed in batch order, so runs are reproducible
/// whatever the execution policy.
pub fn train<T: Real>(
    model: &mut Model<T>,
    data: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    sink: &mut MetricsSink,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Config("empty training split".into()));
    }
    let classification = data.spec.num_classes().is_some();
    let mut opt = OptimizerState::new(cfg.optimizer(), model.store.values());
    let start = Instant::now();
    let mut best = if classification {
        f64::NEG_INFINITY
    } else {
        f64::INFINITY
    };
    let mut last_val = None;
    let mut last_loss = f64::NAN;
    let mut skipped = 0;
    let mut steps_run = 0;

    for step in 0..cfg.steps {
        let t0 = Instant::now();
        let lr = cosine_warmup_lr(step as u64 + 1, cfg.warmup as u64, cfg.steps as u64, cfg.lr);
        opt.set_lr(lr);
        let mut pick = GumbelRng::with_stream(seed, step as u64);
        let batch: Vec<usize> = (0..cfg.batch_size)
            .map(|_| pick.below(data.train.len()))
            .collect();
        let model_ref = &*model;
        let results = cfg.exec.map(
            batch.len(),
            |b| -> Result<(f64, f64, usize, Vec<Array<T>>)> {
                let sample = &data.train[batch[b]];
                let p = model_ref.store.bind(true);
                let mut ctx = ForwardCtx::train(0);
                ctx.rng = GumbelRng::with_stream(
                    seed ^ 0x9e37_79b9_7f4a_7c15,
                    ((step as u64) << 24) | b as u64,
                );
                let out = model_ref.forward(&p, sample.model_input(), &mut ctx)?;
                let (loss, score) = sample_loss(&out, sample.target)?;
                loss.backward()?;
                Ok((loss.item().as_f64(), score, sample.num_tokens(), p.grads()))
            },
        );

        let mut grads: Option<Vec<Array<T>>> = None;
        let (mut loss, mut metric, mut tokens) = (0.0, 0.0, 0usize);
        for r in results {
            let (l, m, t, g) = r?;
            loss += l;
            metric += m;
            tokens += t;
            match &mut grads {
                None => grads = Some(g),
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
            }
        }
        let bs = batch.len() as f64;
        loss /= bs;
        metric /= bs;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step: step as u64,
                loss,
            });
        }
        let mut grads = grads.expect("non-empty batch");
        let inv = T::of(1.0 / bs);
        grads.iter_mut().for_each(|g| g.scale_in_place(inv));
        if opt.step(model.store.values_mut(), &grads) == StepOutcome::SkippedNonFinite {
            skipped += 1;
        }
        last_loss = loss;
        steps_run = step + 1;
        let dt = t0.elapsed().as_secs_f64();

        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            sink.push(MetricsRecord {
                step,
                split: Split::Train,
                loss,
                metric,
                lr,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
                tokens_per_sec: tokens as f64 / dt.max(1e-9),
            })?;
        }
        let is_last = step + 1 == cfg.steps;
        if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) || is_last {
            let t1 = Instant::now();
            let v = evaluate(model, &data.val, seed, cfg.exec)?;
            let val_tokens: usize = data.val.iter().map(Sample::num_tokens).sum();
            sink.push(MetricsRecord {
                step,
                split: Split::Val,
                loss: v.loss,
                metric: v.metric,
                lr,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
                tokens_per_sec: val_tokens as f64 / t1.elapsed().as_secs_f64().max(1e-9),
            })?;
            log::info!(
                "step {step}: train loss {loss:.4}, val loss {:.4}, val metric {:.4}",
                v.loss,
                v.metric
            );
            best = if classification {
                best.max(v.metric)
            } else {
                best.min(v.metric)
            };
            last_val = Some(v);
            if let (Some(target), true) = (cfg.stop_at, classification) {
                if v.metric >= target {
                    break;
                }
            }
        }
    }
    let val = match last_val {
        Some(v) => v,
        None => evaluate(model, &data.val, seed, cfg.exec)?,
    };
    Ok(TrainOutcome {
        steps_run,
        final_train_loss: last_loss,
        val,
        best_val_metric: if best.is_finite() { best } else { val.metric },
        wall_seconds: start.elapsed().as_secs_f64(),
        skipped_updates: skipped,
    })
}
