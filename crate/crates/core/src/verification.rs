//! Independent checks: finite-difference gradients, subset enumeration,
//! Monte-Carlo selection frequencies and operation/runtime scaling.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, AttentionKind, TransformerLayer};
use crate::error::{Error, Result};
use crate::graph::{GraphBridge, GraphInstance};
use crate::gumbel::{
    gumbel_sigmoid, gumbel_softmax, st_gumbel_sigmoid, st_gumbel_softmax, GumbelRng, Temperature,
};
use crate::model::{HeadSpec, InputSpec, Model, ModelConfig, ModelInput};
use crate::nn::{Bound, ForwardCtx, ParamStore};
use crate::par::Exec;
use crate::real::Real;
use crate::sampler::{
    arg_topk, brute_force_set_sample, counters, sample_without_replacement, Locality, SampleMode,
    SamplerConfig,
};
use crate::tensor::{Array, Tensor};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Entries where `|analytic| + |numeric|` is at most this are not scored.
pub const NEGLIGIBLE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckMode {
    /// Analytic and numeric gradients of the same function.
    Plain,
    /// Analytic gradient of a straight-through function against the numeric
    /// gradient of its soft surrogate.
    StraightThrough,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputError {
    pub name: String,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub scored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub target: String,
    pub mode: CheckMode,
    pub inputs: Vec<InputError>,
    pub evaluations: usize,
    pub step: f64,
    pub tolerance: f64,
    pub max_rel_err: f64,
    pub pass: bool,
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

pub type ScalarFn<'a> = dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>> + 'a;

fn eval_const(f: &ScalarFn<'_>, values: &[Array<f64>]) -> Result<f64> {
    let ts: Vec<Tensor<f64>> = values.iter().map(|v| Tensor::constant(v.clone())).collect();
    let out = f(&ts)?;
    if out.value().numel() != 1 {
        return Err(Error::NonScalarRoot(out.shape().to_vec()));
    }
    Ok(out.item())
}

/// Compares the autodiff gradient of `analytic` with central differences of
/// `numeric`, both evaluated at `inputs`.
pub fn gradcheck_pair(
    target: &str,
    analytic: &ScalarFn<'_>,
    numeric: &ScalarFn<'_>,
    mode: CheckMode,
    inputs: &[(&str, Array<f64>)],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut values: Vec<Array<f64>> = inputs.iter().map(|(_, a)| a.clone()).collect();
    let base = eval_const(numeric, &values)?;
    let again = eval_const(numeric, &values)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::NonDeterministic(base, again));
    }
    let leaves: Vec<Tensor<f64>> = values.iter().map(|v| Tensor::param(v.clone())).collect();
    analytic(&leaves)?.backward()?;
    let grads: Vec<Array<f64>> = leaves
        .iter()
        .map(|t| {
            t.grad()
                .map_or_else(|| Array::zeros(t.shape()), |g| g.clone())
        })
        .collect();

    let mut evaluations = 2;
    let mut reports = Vec::with_capacity(inputs.len());
    for (idx, (name, _)) in inputs.iter().enumerate() {
        let (mut max_abs, mut max_rel, mut scored) = (0f64, 0f64, 0);
        for c in 0..values[idx].numel() {
            let orig = values[idx].data()[c];
            values[idx].data_mut()[c] = orig + step;
            let up = eval_const(numeric, &values)?;
            values[idx].data_mut()[c] = orig - step;
            let down = eval_const(numeric, &values)?;
            values[idx].data_mut()[c] = orig;
            evaluations += 2;
            let n = (up - down) / (2.0 * step);
            let a = grads[idx].data()[c];
            max_abs = max_abs.max((a - n).abs());
            if a.abs() + n.abs() > NEGLIGIBLE {
                scored += 1;
                max_rel = max_rel.max(rel_err(a, n));
            }
        }
        reports.push(InputError {
            name: name.to_string(),
            max_abs_err: max_abs,
            max_rel_err: max_rel,
            scored,
        });
    }
    let max_rel_err = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        target: target.into(),
        mode,
        inputs: reports,
        evaluations,
        step,
        tolerance,
        max_rel_err,
        pass: max_rel_err < tolerance,
    })
}

/// Plain finite-difference check of `f`.
pub fn finite_diff_gradcheck(
    target: &str,
    f: &ScalarFn<'_>,
    inputs: &[(&str, Array<f64>)],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    gradcheck_pair(target, f, f, CheckMode::Plain, inputs, step, tolerance)
}

/// `sum(w * t)` with fixed normal weights, plus `0.5 * sum(t^2)` when
/// `quadratic`. Straight-through checks need the linear form: the upstream
/// gradient must not depend on whether the forward was hard or soft.
fn probe_loss(t: &Tensor<f64>, seed: u64, quadratic: bool) -> Result<Tensor<f64>> {
    let mut rng = GumbelRng::new(seed ^ 0x5eed);
    let w = Array::from_fn(t.shape(), |_| rng.normal());
    let linear = t.mul(&Tensor::constant(w))?.sum();
    if quadratic {
        linear.add(&t.mul(t)?.sum().scale(0.5))
    } else {
        Ok(linear)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradTarget {
    SamplerSoft,
    SamplerSoftFull,
    SamplerHard,
    StGumbelSoftmax,
    StGumbelSigmoid,
    GraphBridge,
    SoftModel,
}

impl GradTarget {
    pub const ALL: [GradTarget; 7] = [
        GradTarget::SamplerSoft,
        GradTarget::SamplerSoftFull,
        GradTarget::SamplerHard,
        GradTarget::StGumbelSoftmax,
        GradTarget::StGumbelSigmoid,
        GradTarget::GraphBridge,
        GradTarget::SoftModel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradTarget::SamplerSoft => "sampler-soft",
            GradTarget::SamplerSoftFull => "sampler-soft-full",
            GradTarget::SamplerHard => "sampler-hard",
            GradTarget::StGumbelSoftmax => "st-gumbel-softmax",
            GradTarget::StGumbelSigmoid => "st-gumbel-sigmoid",
            GradTarget::GraphBridge => "graph-bridge",
            GradTarget::SoftModel => "soft-model",
        }
    }

    /// Custom operators whose backward rule this target exercises.
    pub fn covers(self) -> &'static [&'static str] {
        match self {
            GradTarget::SamplerSoft
            | GradTarget::SamplerSoftFull
            | GradTarget::SamplerHard
            | GradTarget::SoftModel => &[crate::sampler::PAIRWISE_TOPK_SAMPLE],
            GradTarget::StGumbelSoftmax => &[crate::gumbel::ST_GUMBEL_SOFTMAX],
            GradTarget::StGumbelSigmoid => &[crate::gumbel::ST_GUMBEL_SIGMOID],
            GradTarget::GraphBridge => &[],
        }
    }
}

impl std::str::FromStr for GradTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GradTarget::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown gradcheck target {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSizes {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub tau: f64,
    pub seed: u64,
}

impl Default for GradCheckSizes {
    fn default() -> Self {
        Self {
            n: 16,
            k: 4,
            d: 3,
            tau: 1.0,
            seed: 0,
        }
    }
}

fn normal_array(shape: &[usize], rng: &mut GumbelRng) -> Array<f64> {
    Array::from_fn(shape, |_| rng.normal())
}

/// Runs one entry of the gradcheck suite at 64-bit precision.
pub fn run_gradcheck(target: GradTarget, s: GradCheckSizes) -> Result<GradCheckReport> {
    match target {
        GradTarget::SamplerSoft | GradTarget::SamplerSoftFull | GradTarget::SamplerHard => {
            gradcheck_sampler(target, s)
        }
        GradTarget::StGumbelSoftmax | GradTarget::StGumbelSigmoid => gradcheck_st(target, s),
        GradTarget::GraphBridge => gradcheck_graph_bridge(s),
        GradTarget::SoftModel => gradcheck_soft_model(s),
    }
}

/// Every target of the suite, in order.
pub fn gradcheck_suite(s: GradCheckSizes) -> Result<Vec<GradCheckReport>> {
    GradTarget::ALL
        .into_iter()
        .map(|t| run_gradcheck(t, s))
        .collect()
}

fn gradcheck_sampler(target: GradTarget, s: GradCheckSizes) -> Result<GradCheckReport> {
    let tau = Temperature::new(s.tau)?;
    let mut rng = GumbelRng::new(s.seed);
    let locality = match target {
        GradTarget::SamplerSoftFull => Locality::Full,
        _ => Locality::Truncated,
    };
    let inputs = [
        ("z", normal_array(&[s.n], &mut rng)),
        ("x", normal_array(&[s.n, s.d], &mut rng)),
    ];
    let straight = target == GradTarget::SamplerHard;
    let run = |mode: SampleMode| {
        let cfg = SamplerConfig {
            mode,
            locality,
            tau,
            ..Default::default()
        };
        move |t: &[Tensor<f64>]| -> Result<Tensor<f64>> {
            let r = sample_without_replacement(&t[0], &t[1], s.k, &cfg, None)?;
            probe_loss(&r.rows, s.seed, !straight)
        }
    };
    let soft = run(SampleMode::Soft);
    if straight {
        let hard = run(SampleMode::Hard);
        gradcheck_pair(
            target.name(),
            &hard,
            &soft,
            CheckMode::StraightThrough,
            &inputs,
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        )
    } else {
        finite_diff_gradcheck(
            target.name(),
            &soft,
            &inputs,
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        )
    }
}

fn gradcheck_st(target: GradTarget, s: GradCheckSizes) -> Result<GradCheckReport> {
    let tau = Temperature::new(s.tau)?;
    let logits = normal_array(&[3, s.n.max(2)], &mut GumbelRng::new(s.seed));
    let softmax = target == GradTarget::StGumbelSoftmax;
    let build = |hard: bool| {
        move |t: &[Tensor<f64>]| -> Result<Tensor<f64>> {
            let mut noise = GumbelRng::new(s.seed.wrapping_add(1));
            let r = Some(&mut noise);
            let y = match (softmax, hard) {
                (true, true) => st_gumbel_softmax(&t[0], tau, r)?,
                (true, false) => gumbel_softmax(&t[0], tau, r)?,
                (false, true) => st_gumbel_sigmoid(&t[0], tau, r)?,
                (false, false) => gumbel_sigmoid(&t[0], tau, r)?,
            };
            probe_loss(&y, s.seed, false)
        }
    };
    gradcheck_pair(
        target.name(),
        &build(true),
        &build(false),
        CheckMode::StraightThrough,
        &[("logits", logits)],
        DEFAULT_STEP,
        DEFAULT_TOLERANCE,
    )
}

fn named_inputs(store: &ParamStore<f64>) -> Vec<(&str, Array<f64>)> {
    store.named().map(|(n, a)| (n, a.clone())).collect()
}

fn gradcheck_graph_bridge(s: GradCheckSizes) -> Result<GradCheckReport> {
    let mut store = ParamStore::<f64>::new();
    let d = s.d.max(2);
    let bridge = GraphBridge::new(&mut store, s.seed, "graph", d, 2, 1);
    let graph = GraphInstance::parse(
        "4 4 2 1\n1 0\n0 1\n0.5 0.5\n-1 2\n0 1 0.3\n1 2 -0.7\n2 3 1.1\n3 1 0.2\n",
    )?
    .symmetrized();
    let eps = bridge.draw_noise::<f64>(&mut GumbelRng::new(s.seed ^ 7), graph.num_nodes());
    let f = |t: &[Tensor<f64>]| -> Result<Tensor<f64>> {
        let p = Bound::from_tensors(t.to_vec());
        let tokens = bridge.tokenize_with_noise(&p, &graph, Some(&eps))?.tokens;
        probe_loss(&tokens, s.seed, true)
    };
    finite_diff_gradcheck(
        "graph-bridge",
        &f,
        &named_inputs(&store),
        DEFAULT_STEP,
        DEFAULT_TOLERANCE,
    )
}

/// Two soft-mode sampled layers (`d = 8`, `h = 2`, `k = 2`), noise off,
/// residual scale 1 and distinct support scores (tied scores sit on a kink
/// of the truncated ordering).
fn gradcheck_soft_model(s: GradCheckSizes) -> Result<GradCheckReport> {
    let config = ModelConfig {
        n_depth: 2,
        layer: AttentionConfig {
            attention: AttentionKind::Samsa,
            d_model: 8,
            n_heads: 2,
            k: 2,
            d_ffn: 16,
            mode: SampleMode::Soft,
            tau: Temperature::new(s.tau)?,
            ..Default::default()
        },
        input: InputSpec::Sequence {
            features: 3,
            positional: true,
        },
        head: HeadSpec::Pooled { outputs: 4 },
    };
    let mut model = Model::<f64>::new(config, s.seed)?;
    model.store.get_mut(model.alpha).data_mut()[0] = 1.0;
    let mut jitter = GumbelRng::new(s.seed ^ 13);
    for i in 0..model.store.len() {
        let id = crate::nn::ParamId(i);
        if model.store.name(id).ends_with("z_supp") {
            model
                .store
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = jitter.normal());
        }
    }
    let x = normal_array(&[5, 3], &mut GumbelRng::new(s.seed ^ 11));
    let f = |t: &[Tensor<f64>]| -> Result<Tensor<f64>> {
        let p = Bound::from_tensors(t.to_vec());
        let out = model.forward(&p, ModelInput::Sequence(&x), &mut ForwardCtx::eval(0))?;
        out.cross_entropy(&[1])
    };
    finite_diff_gradcheck(
        "soft-model",
        &f,
        &named_inputs(&model.store),
        DEFAULT_STEP,
        DEFAULT_TOLERANCE,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleMismatch {
    pub z: Vec<f64>,
    pub k: usize,
    pub topk: Vec<usize>,
    pub enumerated: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub trials: usize,
    pub agreements: usize,
    pub n_max: usize,
    pub k_max: usize,
    pub seed: u64,
    pub seconds: f64,
    pub mismatches: Vec<OracleMismatch>,
}

impl OracleReport {
    pub fn pass(&self) -> bool {
        self.agreements == self.trials
    }
}

/// Compares the top-k set with exhaustive subset search on random
/// continuous scores, `n <= n_max`, `k <= min(k_max, n)`.
pub fn oracle_sweep<T: Real>(
    n_max: usize,
    k_max: usize,
    trials: usize,
    seed: u64,
) -> Result<OracleReport> {
    if n_max == 0 || k_max == 0 {
        return Err(Error::Config("n_max and k_max must be positive".into()));
    }
    let start = Instant::now();
    let mut rng = GumbelRng::new(seed);
    let mut mismatches = Vec::new();
    for _ in 0..trials {
        let n = 1 + rng.below(n_max);
        let k = 1 + rng.below(k_max.min(n));
        let z: Vec<T> = (0..n).map(|_| T::of(rng.normal())).collect();
        let mut topk = arg_topk(&z, k)?;
        topk.sort_unstable();
        let (enumerated, _) = brute_force_set_sample(&z, &Array::<T>::zeros(&[n, 1]), k)?;
        if topk != enumerated {
            let z = z.iter().map(|v| v.as_f64()).collect();
            mismatches.push(OracleMismatch {
                z,
                k,
                topk,
                enumerated,
            });
        }
    }
    Ok(OracleReport {
        trials,
        agreements: trials - mismatches.len(),
        n_max,
        k_max,
        seed,
        seconds: start.elapsed().as_secs_f64(),
        mismatches,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityRow {
    pub n: usize,
    pub runs_ms: Vec<f64>,
    pub median_ms: f64,
    pub attention_scores: u64,
    pub selection_reads: u64,
    pub pair_evals: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub attention: AttentionKind,
    pub mode: SampleMode,
    pub k: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub rows: Vec<ComplexityRow>,
    /// Least-squares slope of `ln(median time)` against `ln(n)`.
    pub exponent: f64,
}

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn fit_exponent(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Times one eval-mode layer forward (no gradient) per `n`, with operation
/// counts from the first repeat.
pub fn complexity_probe<T: Real>(
    layer: AttentionConfig,
    ns: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<ComplexityReport> {
    if ns.len() < 2 || repeats == 0 {
        return Err(Error::Config(
            "complexity probe needs two sizes and one repeat".into(),
        ));
    }
    let mut store = ParamStore::<T>::new();
    let l = TransformerLayer::new(&mut store, seed, "probe", layer)?;
    let p = store.bind(false);
    let alpha = Tensor::scalar(T::of(1.0));
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let mut rng = GumbelRng::with_stream(seed, n as u64);
        let x = Tensor::constant(Array::<T>::from_fn(&[n, layer.d_model], |_| {
            T::of(rng.normal())
        }));
        let mut runs = Vec::with_capacity(repeats);
        let mut counts = counters::OpCounts::default();
        for r in 0..repeats {
            counters::reset();
            let t = Instant::now();
            let y = l.forward(&p, &alpha, &x, &mut ForwardCtx::eval(seed))?;
            runs.push(t.elapsed().as_secs_f64() * 1e3);
            drop(y);
            if r == 0 {
                counts = counters::snapshot();
            }
        }
        rows.push(ComplexityRow {
            n,
            median_ms: median(&runs),
            runs_ms: runs,
            attention_scores: counts.attention_scores,
            selection_reads: counts.selection_reads,
            pair_evals: counts.pair_evals,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.median_ms).collect();
    Ok(ComplexityReport {
        attention: layer.attention,
        mode: layer.mode,
        k: layer.k,
        d_model: layer.d_model,
        n_heads: layer.n_heads,
        exponent: fit_exponent(&xs, &ys),
        rows,
    })
}

/// Reference Gumbel-top-k: `k` rounds of fresh noise over the remaining
/// items, taking the argmax each round.
pub fn sequential_gumbel_topk(z: &[f64], k: usize, rng: &mut GumbelRng) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..z.len()).collect();
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k.min(z.len()) {
        let (pos, _) = remaining
            .iter()
            .enumerate()
            .map(|(p, &i)| (p, z[i] + rng.gumbel()))
            .fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
        picked.push(remaining.remove(pos));
    }
    picked
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub z: Vec<f64>,
    pub k: usize,
    pub draws: usize,
    pub softmax: Vec<f64>,
    /// First-pick frequencies of the parallel hard sampler.
    pub sampler: Vec<f64>,
    /// First-pick frequencies of [`sequential_gumbel_topk`].
    pub reference: Vec<f64>,
    /// Largest `|f_i - p_i| / sqrt(p_i (1 - p_i) / draws)`.
    pub max_sigmas: f64,
    pub max_reference_gap: f64,
}

impl DistributionReport {
    pub fn within_3_sigma(&self) -> bool {
        self.max_sigmas <= 3.0
    }

    pub fn within_reference(&self, tol: f64) -> bool {
        self.max_reference_gap <= tol
    }
}

/// Empirical first-pick frequencies of the hard sampler (score noise on)
/// against `softmax(z)` and against the sequential reference.
pub fn distribution_probe(
    z: &[f64],
    k: usize,
    draws: usize,
    seed: u64,
    exec: Exec,
) -> Result<DistributionReport> {
    let n = z.len();
    if k == 0 || k >= n {
        return Err(Error::NotEnoughCandidates { k, available: n });
    }
    let locality = if n >= 2 * k {
        Locality::Truncated
    } else {
        Locality::Full
    };
    let cfg = SamplerConfig {
        mode: SampleMode::Hard,
        locality,
        pair_noise: false,
        ..Default::default()
    };
    const CHUNKS: usize = 16;
    let per = draws.div_ceil(CHUNKS);
    let counts = exec.map(CHUNKS, |c| -> Result<(Vec<usize>, Vec<usize>)> {
        let todo = per.min(draws.saturating_sub(c * per));
        let zt = Tensor::constant(Array::vector(z.to_vec()));
        let xt = Tensor::constant(Array::<f64>::zeros(&[n, 1]));
        let mut ours = vec![0; n];
        let mut refs = vec![0; n];
        let mut rng = GumbelRng::with_stream(seed, 2 * c as u64);
        let mut ref_rng = GumbelRng::with_stream(seed, 2 * c as u64 + 1);
        for _ in 0..todo {
            let r = sample_without_replacement(&zt, &xt, k, &cfg, Some(&mut rng))?;
            ours[r.selected[0]] += 1;
            refs[sequential_gumbel_topk(z, k, &mut ref_rng)[0]] += 1;
        }
        Ok((ours, refs))
    });
    let mut ours = vec![0usize; n];
    let mut refs = vec![0usize; n];
    for c in counts {
        let (o, r) = c?;
        ours.iter_mut().zip(o).for_each(|(a, b)| *a += b);
        refs.iter_mut().zip(r).for_each(|(a, b)| *a += b);
    }
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = e.iter().sum();
    let softmax: Vec<f64> = e.iter().map(|v| v / total).collect();
    let d = draws as f64;
    let sampler: Vec<f64> = ours.iter().map(|&c| c as f64 / d).collect();
    let reference: Vec<f64> = refs.iter().map(|&c| c as f64 / d).collect();
    let max_sigmas = sampler
        .iter()
        .zip(&softmax)
        .map(|(f, p)| (f - p).abs() / (p * (1.0 - p) / d).sqrt().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    let max_reference_gap = sampler
        .iter()
        .zip(&reference)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(DistributionReport {
        z: z.to_vec(),
        k,
        draws,
        softmax,
        sampler,
        reference,
        max_sigmas,
        max_reference_gap,
    })
}
