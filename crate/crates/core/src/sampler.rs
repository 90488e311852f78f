//! Differentiable top-k sampling.
//!
//! * [`sample_with_replacement`]: `k` independent straight-through
//!   Gumbel-softmax draws; duplicates possible.
//! * [`brute_force_set_sample`]: scores every k-subset by the sum of its
//!   members' scores and takes the best. Exponential; kept as an oracle.
//! * [`sample_without_replacement`]: takes the top-k set directly and relaxes
//!   it by comparing every selected index `i_m` with every index `j_v` of a
//!   locality set (the indices that could be swapped in). Each comparison is
//!   a Gumbel-sigmoid of the score margin `z[i_m] - z[j_v]`; output row `m`
//!   averages `p * X[i_m] + (1 - p) * X[j_v]` over the locality.
//!   In hard mode `p` is 1 in the forward pass, so rows are exactly the
//!   selected rows, while the backward pass uses the sigmoid Jacobian.
//! * [`multi_head_sample`]: one independent sampler per score column.

use std::cell::Cell;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gumbel::{gumbel_noise, st_gumbel_softmax, GumbelRng, Temperature};
use crate::real::Real;
use crate::tensor::ops::sigmoid;
use crate::tensor::{Array, CustomOp, Tensor};

pub const PAIRWISE_TOPK_SAMPLE: &str = "pairwise_topk_sample";

/// Largest number of subsets [`brute_force_set_sample`] will enumerate.
pub const ENUMERATION_BUDGET: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    /// Exact top-k rows forward, relaxed backward.
    #[default]
    Hard,
    /// Relaxed blend forward and backward.
    Soft,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Locality {
    /// Every non-selected index: `k * (n - k)` comparisons.
    Full,
    /// Only the next `k` highest-scored indices: `k * k` comparisons.
    #[default]
    Truncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub mode: SampleMode,
    pub locality: Locality,
    pub tau: Temperature,
    /// Add Gumbel noise to the scores before ranking (when an rng is given).
    pub score_noise: bool,
    /// Add fresh Gumbel noise inside each pairwise sigmoid (when an rng is given).
    pub pair_noise: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            mode: SampleMode::Hard,
            locality: Locality::Truncated,
            tau: Temperature::ONE,
            score_noise: true,
            pair_noise: true,
        }
    }
}

/// Per-thread operation counters used by the complexity probes.
pub mod counters {
    use super::Cell;

    thread_local! {
        static SELECTION_READS: Cell<u64> = const { Cell::new(0) };
        static PAIR_EVALS: Cell<u64> = const { Cell::new(0) };
        static ATTENTION_SCORES: Cell<u64> = const { Cell::new(0) };
    }

    #[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
    pub struct OpCounts {
        /// Score entries read while ranking candidates.
        pub selection_reads: u64,
        /// Pairwise comparisons evaluated (sigmoid + gradient terms).
        pub pair_evals: u64,
        /// Query-key dot products formed in attention.
        pub attention_scores: u64,
    }

    pub fn reset() {
        SELECTION_READS.with(|c| c.set(0));
        PAIR_EVALS.with(|c| c.set(0));
        ATTENTION_SCORES.with(|c| c.set(0));
    }

    pub fn snapshot() -> OpCounts {
        OpCounts {
            selection_reads: SELECTION_READS.with(Cell::get),
            pair_evals: PAIR_EVALS.with(Cell::get),
            attention_scores: ATTENTION_SCORES.with(Cell::get),
        }
    }

    pub(crate) fn add_selection(n: u64) {
        SELECTION_READS.with(|c| c.set(c.get() + n));
    }

    pub(crate) fn add_pairs(n: u64) {
        PAIR_EVALS.with(|c| c.set(c.get() + n));
    }

    pub(crate) fn add_attention(n: u64) {
        ATTENTION_SCORES.with(|c| c.set(c.get() + n));
    }
}

fn check_scores<T: Real>(z: &[T]) -> Result<()> {
    if z.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("importance scores"))
    }
}

/// Indices of the `m` largest scores, descending, ties to the lower index.
/// Partial selection followed by a sort of the prefix: `O(n + m log m)`.
fn ranked_prefix<T: Real>(z: &[T], m: usize) -> Vec<usize> {
    let n = z.len();
    counters::add_selection(n as u64);
    let cmp = |a: &usize, b: &usize| {
        z[*b]
            .partial_cmp(&z[*a])
            .expect("finite scores")
            .then(a.cmp(b))
    };
    let mut idx: Vec<usize> = (0..n).collect();
    if m == 0 {
        return Vec::new();
    }
    if m < n {
        idx.select_nth_unstable_by(m - 1, cmp);
        idx.truncate(m);
    }
    idx.sort_unstable_by(cmp);
    idx
}

/// Indices of the `k` largest scores in descending score order; ties go to
/// the lower index. Never enumerates subsets.
pub fn arg_topk<T: Real>(z: &[T], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > z.len() {
        return Err(Error::NotEnoughCandidates {
            k,
            available: z.len(),
        });
    }
    check_scores(z)?;
    Ok(ranked_prefix(z, k))
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Enumerates all k-subsets in lexicographic order and returns the one with
/// the largest score sum (first wins on ties) with its rows. No gradient.
pub fn brute_force_set_sample<T: Real>(
    z: &[T],
    x: &Array<T>,
    k: usize,
) -> Result<(Vec<usize>, Array<T>)> {
    let n = z.len();
    if x.rows() != n {
        return Err(Error::shape("brute_force_set_sample", &[n], x.shape()));
    }
    if k == 0 || k > n {
        return Err(Error::NotEnoughCandidates { k, available: n });
    }
    let count = binomial(n, k);
    if count > ENUMERATION_BUDGET {
        return Err(Error::CombinatorialBudget {
            n,
            k,
            count,
            budget: ENUMERATION_BUDGET,
        });
    }
    check_scores(z)?;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for set in (0..n).combinations(k) {
        let score: f64 = set.iter().map(|&i| z[i].as_f64()).sum();
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, set));
        }
    }
    let (_, set) = best.expect("at least one subset");
    let w = x.row_width();
    let mut shape = x.shape().to_vec();
    shape[0] = k;
    let data = set.iter().flat_map(|&i| x.row(i).iter().copied()).collect();
    Ok((
        set,
        Array::new(shape, data)
            .map_err(|_| Error::shape("brute_force_set_sample", &[k, w], x.shape()))?,
    ))
}

/// `k` independent straight-through Gumbel-softmax draws over `z`, each
/// picking one row of `x`. Rows may repeat.
pub fn sample_with_replacement<T: Real>(
    z: &Tensor<T>,
    x: &Tensor<T>,
    k: usize,
    tau: Temperature,
    rng: Option<&mut GumbelRng>,
) -> Result<Tensor<T>> {
    let n = z.value().numel();
    if z.value().ndim() != 1 || x.value().ndim() != 2 || x.shape()[0] != n {
        return Err(Error::shape(
            "sample_with_replacement",
            z.shape(),
            x.shape(),
        ));
    }
    let logits = Tensor::constant(Array::zeros(&[k, n])).add(z)?;
    let one_hot = st_gumbel_softmax(&logits, tau, rng)?;
    one_hot.matmul(x)
}

/// Output of one without-replacement draw.
#[derive(Debug, Clone)]
pub struct SampleResult<T: Real> {
    /// Selected indices, descending by (noised) score.
    pub selected: Vec<usize>,
    /// Locality indices compared against, descending by score.
    pub locality: Vec<usize>,
    /// `k x d` sampled rows.
    pub rows: Tensor<T>,
    mode: SampleMode,
    pairs: PairRelaxation<T>,
}

impl<T: Real> SampleResult<T> {
    /// The `k x |j|` relaxation matrix as used in the forward pass: all ones
    /// in hard mode, sigmoid values in soft mode.
    pub fn relaxation(&self) -> Array<T> {
        match self.mode {
            SampleMode::Hard => Array::ones(&[self.selected.len(), self.locality.len()]),
            SampleMode::Soft => self.pairs.soft_values(&self.selected, &self.locality),
        }
    }

    /// Sigmoid values of the relaxation, whatever the mode.
    pub fn soft_relaxation(&self) -> Array<T> {
        self.pairs.soft_values(&self.selected, &self.locality)
    }

    pub fn mode(&self) -> SampleMode {
        self.mode
    }
}

/// Everything needed to evaluate the pairwise sigmoids. The pairwise noise is
/// regenerated from a seed, so the forward pass draws one number regardless
/// of `k` and the `k * |j|` work happens only where it is needed.
#[derive(Debug, Clone)]
struct PairRelaxation<T> {
    scores: Array<T>,
    tau: Temperature,
    noise_seed: Option<u64>,
}

impl<T: Real> PairRelaxation<T> {
    fn noise(&self, k: usize, l: usize) -> Option<Array<T>> {
        self.noise_seed
            .map(|s| gumbel_noise(&mut GumbelRng::new(s), &[k, l]))
    }

    fn soft_values(&self, selected: &[usize], locality: &[usize]) -> Array<T> {
        self.soft_values_from(self.scores.data(), selected, locality)
    }

    fn soft_values_from(&self, z: &[T], selected: &[usize], locality: &[usize]) -> Array<T> {
        let (k, l) = (selected.len(), locality.len());
        counters::add_pairs((k * l) as u64);
        let noise = self.noise(k, l);
        let inv_tau = T::of(1.0 / self.tau.get());
        Array::from_fn(&[k, l], |e| {
            let (m, v) = (e / l, e % l);
            let g = noise.as_ref().map_or(T::zero(), |n| n.data()[e]);
            sigmoid((z[selected[m]] - z[locality[v]] + g) * inv_tau)
        })
    }
}

struct PairwiseTopK<T> {
    selected: Vec<usize>,
    locality: Vec<usize>,
    mode: SampleMode,
    pairs: PairRelaxation<T>,
}

impl<T: Real> PairwiseTopK<T> {
    /// `rows = diag(rowsum(p) / |j|) X_i + ((1 - p) / |j|) X_j`
    fn blend(&self, p: &Array<T>, x: &Array<T>) -> Array<T> {
        let (k, l) = (self.selected.len(), self.locality.len());
        let inv_l = T::of(1.0 / l as f64);
        let xi = gather(x, &self.selected);
        let xj = gather(x, &self.locality);
        let q = p.map(|v| (T::one() - v) * inv_l);
        let mut out = Array::matmul_t(&q, false, &xj, false);
        for m in 0..k {
            let c = p.row(m).iter().copied().sum::<T>() * inv_l;
            for (o, &xv) in out.row_mut(m).iter_mut().zip(xi.row(m)) {
                *o += c * xv;
            }
        }
        out
    }
}

fn gather<T: Real>(x: &Array<T>, idx: &[usize]) -> Array<T> {
    let w = x.row_width();
    let mut data = Vec::with_capacity(idx.len() * w);
    for &i in idx {
        data.extend_from_slice(x.row(i));
    }
    Array::new(vec![idx.len(), w], data).expect("gather shape")
}

impl<T: Real> CustomOp<T> for PairwiseTopK<T> {
    fn name(&self) -> &'static str {
        PAIRWISE_TOPK_SAMPLE
    }

    fn forward(&self, inputs: &[&Array<T>]) -> Result<Array<T>> {
        let x = inputs[1];
        Ok(match self.mode {
            SampleMode::Hard => gather(x, &self.selected),
            SampleMode::Soft => {
                let p =
                    self.pairs
                        .soft_values_from(inputs[0].data(), &self.selected, &self.locality);
                self.blend(&p, x)
            }
        })
    }

    /// Same rule in both modes: the Jacobian of the soft blend.
    fn backward(
        &self,
        inputs: &[&Array<T>],
        _: &Array<T>,
        grad: &Array<T>,
    ) -> Vec<Option<Array<T>>> {
        let (z, x) = (inputs[0], inputs[1]);
        let (k, l) = (self.selected.len(), self.locality.len());
        let inv_l = T::of(1.0 / l as f64);
        let inv_tau = T::of(1.0 / self.pairs.tau.get());
        let p = self
            .pairs
            .soft_values_from(z.data(), &self.selected, &self.locality);
        let xi = gather(x, &self.selected);
        let xj = gather(x, &self.locality);

        // d rows[m] / d p[m, v] = (X[i_m] - X[j_v]) / |j|
        let gxj = Array::matmul_t(grad, false, &xj, true); // k x l: <G_m, X_jv>
        let mut gz = vec![T::zero(); z.numel()];
        let mut gx = Array::zeros(x.shape());
        for m in 0..k {
            let gi: T = grad
                .row(m)
                .iter()
                .zip(xi.row(m))
                .map(|(&a, &b)| a * b)
                .sum();
            let mut row_sum = T::zero();
            for v in 0..l {
                let pv = p.get2(m, v);
                row_sum += pv;
                let dp = (gi - gxj.get2(m, v)) * inv_l;
                let ds = dp * pv * (T::one() - pv) * inv_tau;
                gz[self.selected[m]] += ds;
                gz[self.locality[v]] -= ds;
            }
            let c = row_sum * inv_l;
            for (o, &gv) in gx.row_mut(self.selected[m]).iter_mut().zip(grad.row(m)) {
                *o += c * gv;
            }
        }
        // d rows / d X_j = ((1 - p) / |j|)^T G
        let q = p.map(|v| (T::one() - v) * inv_l);
        let gj = Array::matmul_t(&q, true, grad, false);
        for (v, &j) in self.locality.iter().enumerate() {
            for (o, &gv) in gx.row_mut(j).iter_mut().zip(gj.row(v)) {
                *o += gv;
            }
        }
        vec![Some(Array::new(z.shape().to_vec(), gz).unwrap()), Some(gx)]
    }
}

/// Parallelizable differentiable top-k without replacement.
///
/// `z` holds `n` scores, `x` the `n x d` candidate rows. Passing `rng`
/// enables the noise sources switched on in `cfg`; `None` is deterministic.
pub fn sample_without_replacement<T: Real>(
    z: &Tensor<T>,
    x: &Tensor<T>,
    k: usize,
    cfg: &SamplerConfig,
    mut rng: Option<&mut GumbelRng>,
) -> Result<SampleResult<T>> {
    let n = z.value().numel();
    if z.value().ndim() != 1 || x.value().ndim() != 2 || x.shape()[0] != n {
        return Err(Error::shape(
            "sample_without_replacement",
            z.shape(),
            x.shape(),
        ));
    }
    let need = match cfg.locality {
        Locality::Full => k + 1,
        Locality::Truncated => 2 * k,
    };
    if k == 0 || n < need {
        return Err(Error::NotEnoughCandidates { k, available: n });
    }
    check_scores(z.data())?;

    let z = match rng.as_deref_mut() {
        Some(r) if cfg.score_noise => z.add(&Tensor::constant(gumbel_noise(r, &[n])))?,
        _ => z.clone(),
    };
    let noise_seed = match rng {
        Some(r) if cfg.pair_noise => Some(r.fork_seed()),
        _ => None,
    };

    let (selected, locality) = match cfg.locality {
        Locality::Truncated => {
            let mut ranked = ranked_prefix(z.data(), 2 * k);
            let locality = ranked.split_off(k);
            (ranked, locality)
        }
        Locality::Full => {
            let mut ranked = ranked_prefix(z.data(), n);
            let locality = ranked.split_off(k);
            (ranked, locality)
        }
    };
    let pairs = PairRelaxation {
        scores: z.value().clone(),
        tau: cfg.tau,
        noise_seed,
    };
    let op = PairwiseTopK {
        selected: selected.clone(),
        locality: locality.clone(),
        mode: cfg.mode,
        pairs: pairs.clone(),
    };
    let rows = Tensor::apply_custom(op, &[&z, x])?;
    Ok(SampleResult {
        selected,
        locality,
        rows,
        mode: cfg.mode,
        pairs,
    })
}

#[derive(Debug, Clone)]
pub struct MultiHeadSample<T: Real> {
    pub heads: Vec<SampleResult<T>>,
    /// `(h * k) x c`, head-major.
    pub stacked: Tensor<T>,
}

/// Head `t` samples `k` rows of the shared candidates `p` using score column
/// `t` of `z`. Each head gets its own noise stream derived from one draw of
/// `rng`, so heads are independent of evaluation order.
pub fn multi_head_sample<T: Real>(
    z: &Tensor<T>,
    p: &Tensor<T>,
    k: usize,
    cfg: &SamplerConfig,
    rng: Option<&mut GumbelRng>,
) -> Result<MultiHeadSample<T>> {
    if z.value().ndim() != 2 || p.value().ndim() != 2 || z.shape()[0] != p.shape()[0] {
        return Err(Error::shape("multi_head_sample", z.shape(), p.shape()));
    }
    let (n, h) = (z.shape()[0], z.shape()[1]);
    let base = rng.map(|r| r.fork_seed());
    let mut heads = Vec::with_capacity(h);
    for t in 0..h {
        let zt = z.slice_cols(t, t + 1)?.reshape(&[n])?;
        let mut head_rng = base.map(|s| GumbelRng::with_stream(s, t as u64));
        heads.push(sample_without_replacement(
            &zt,
            p,
            k,
            cfg,
            head_rng.as_mut(),
        )?);
    }
    let rows: Vec<&Tensor<T>> = heads.iter().map(|r| &r.rows).collect();
    let stacked = Tensor::concat_rows(&rows)?;
    Ok(MultiHeadSample { heads, stacked })
}
