//! Transformer layers: sampled (SAMSA) and full self-attention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gumbel::{gumbel_noise, GumbelRng, Temperature};
use crate::nn::{Bound, ForwardCtx, Init, Linear, Mlp, ParamId, ParamStore};
use crate::real::Real;
use crate::sampler::{counters, sample_without_replacement, Locality, SampleMode, SamplerConfig};
use crate::tensor::{Array, Tensor};

pub const RMS_EPS: f64 = 1e-6;

pub fn rms_norm<T: Real>(x: &Tensor<T>, gain: &Tensor<T>) -> Result<Tensor<T>> {
    x.rms_norm(gain, RMS_EPS)
}

/// `softmax(Q K^T / sqrt(d_h)) V`.
pub fn scaled_dot_attention<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
) -> Result<Tensor<T>> {
    if k.value().ndim() != 2 || v.value().ndim() != 2 || q.value().ndim() != 2 {
        return Err(Error::shape("scaled_dot_attention", q.shape(), k.shape()));
    }
    if k.shape()[0] != v.shape()[0] {
        return Err(Error::shape("scaled_dot_attention", k.shape(), v.shape()));
    }
    if k.shape()[0] == 0 {
        return Err(Error::NotEnoughCandidates { k: 1, available: 0 });
    }
    let d_h = q.shape()[1];
    counters::add_attention((q.shape()[0] * k.shape()[0]) as u64);
    let scores = q.matmul(&k.t()?)?.scale(1.0 / (d_h as f64).sqrt());
    scores.softmax_lastdim().matmul(v)
}

/// Fixed sinusoidal position table, `n x d`.
pub fn sinusoid_positions<T: Real>(n: usize, d: usize) -> Array<T> {
    Array::from_fn(&[n, d], |i| {
        let (pos, c) = ((i / d) as f64, i % d);
        let freq = 10000f64.powf(-((c / 2 * 2) as f64) / d as f64);
        T::of(if c % 2 == 0 {
            (pos * freq).sin()
        } else {
            (pos * freq).cos()
        })
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    #[default]
    Samsa,
    Full,
}

/// Which activations the importance-score MLP reads.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreInput {
    #[default]
    Raw,
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionConfig {
    pub attention: AttentionKind,
    pub d_model: usize,
    pub n_heads: usize,
    pub k: usize,
    pub d_ffn: usize,
    pub mode: SampleMode,
    pub locality: Locality,
    pub tau: Temperature,
    /// Gumbel noise inside the pairwise relaxation while training.
    pub pair_noise: bool,
    pub p_dropout: f64,
    pub p_droppath: f64,
    pub score_input: ScoreInput,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            attention: AttentionKind::Samsa,
            d_model: 64,
            n_heads: 4,
            k: 16,
            d_ffn: 128,
            mode: SampleMode::Hard,
            locality: Locality::Truncated,
            tau: Temperature::ONE,
            pair_noise: true,
            p_dropout: 0.0,
            p_droppath: 0.0,
            score_input: ScoreInput::Raw,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model ({}) must be a positive multiple of n_heads ({})",
                self.d_model, self.n_heads
            ));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.d_ffn == 0 {
            return bad("d_ffn must be at least 1".into());
        }
        for (name, p) in [
            ("p_dropout", self.p_dropout),
            ("p_droppath", self.p_droppath),
        ] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1), got {p}"));
            }
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            mode: self.mode,
            locality: self.locality,
            tau: self.tau,
            score_noise: false,
            pair_noise: self.pair_noise,
        }
    }
}

/// Parameters only the sampled layer has.
#[derive(Debug, Clone, Copy)]
pub struct SamplerParams {
    pub score: Mlp,
    /// `2k x 2d` learnable candidate rows.
    pub p_supp: ParamId,
    /// `2k x h` learnable candidate scores.
    pub z_supp: ParamId,
}

/// One pre-norm transformer block; residual branches are scaled by a scalar
/// owned by the caller.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub config: AttentionConfig,
    pub norm_attn: ParamId,
    pub norm_ffn: ParamId,
    pub q: Linear,
    pub kv: Linear,
    pub out: Linear,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub sampler: Option<SamplerParams>,
}

/// Indices picked by each head, into the pool of `n` tokens followed by the
/// `2k` support rows.
pub type HeadSelections = Vec<Vec<usize>>;

impl TransformerLayer {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        seed: u64,
        name: &str,
        config: AttentionConfig,
    ) -> Result<Self> {
        config.validate()?;
        let (d, h, k) = (config.d_model, config.n_heads, config.k);
        let norm_attn = store.init(
            seed,
            &format!("{name}.norm_attn"),
            &[d],
            Init::Constant(1.0),
        );
        let norm_ffn = store.init(seed, &format!("{name}.norm_ffn"), &[d], Init::Constant(1.0));
        let q = Linear::new(store, seed, &format!("{name}.q"), d, d);
        let kv = Linear::new(store, seed, &format!("{name}.kv"), d, 2 * d);
        let out = Linear::new(store, seed, &format!("{name}.out"), d, d);
        let ffn_in = Linear::new(store, seed, &format!("{name}.ffn_in"), d, config.d_ffn);
        let ffn_out = Linear::new(store, seed, &format!("{name}.ffn_out"), config.d_ffn, d);
        let sampler = match config.attention {
            AttentionKind::Full => None,
            AttentionKind::Samsa => Some(SamplerParams {
                score: Mlp::new(store, seed, &format!("{name}.score"), d, d, h),
                p_supp: store.init(
                    seed,
                    &format!("{name}.p_supp"),
                    &[2 * k, 2 * d],
                    Init::Normal(0.5),
                ),
                z_supp: store.init(seed, &format!("{name}.z_supp"), &[2 * k, h], Init::Zeros),
            }),
        };
        Ok(Self {
            config,
            norm_attn,
            norm_ffn,
            q,
            kv,
            out,
            ffn_in,
            ffn_out,
            sampler,
        })
    }

    pub fn forward<T: Real>(
        &self,
        p: &Bound<T>,
        alpha: &Tensor<T>,
        x: &Tensor<T>,
        ctx: &mut ForwardCtx,
    ) -> Result<Tensor<T>> {
        self.forward_traced(p, alpha, x, ctx, None)
    }

    /// As [`forward`](Self::forward), recording each head's selection.
    pub fn forward_traced<T: Real>(
        &self,
        p: &Bound<T>,
        alpha: &Tensor<T>,
        x: &Tensor<T>,
        ctx: &mut ForwardCtx,
        trace: Option<&mut HeadSelections>,
    ) -> Result<Tensor<T>> {
        let d = self.config.d_model;
        if x.value().ndim() != 2 || x.shape()[1] != d || x.shape()[0] == 0 {
            return Err(Error::shape("transformer_layer", x.shape(), &[0, d]));
        }
        let xn = rms_norm(x, p.get(self.norm_attn))?;
        let heads = match &self.sampler {
            Some(sp) => self.sampled_heads(p, sp, x, &xn, ctx, trace)?,
            None => self.full_heads(p, &xn)?,
        };
        let attn = self.out.forward(p, &heads)?;
        let attn = ctx.dropout(&attn, self.config.p_dropout)?;
        let attn = ctx.drop_path(&attn, self.config.p_droppath)?;
        let x = x.add(&attn.mul(alpha)?)?;

        let xn = rms_norm(&x, p.get(self.norm_ffn))?;
        let hidden = self.ffn_in.forward(p, &xn)?.gelu();
        let hidden = ctx.dropout(&hidden, self.config.p_dropout)?;
        let ffn = self.ffn_out.forward(p, &hidden)?;
        let ffn = ctx.drop_path(&ffn, self.config.p_droppath)?;
        x.add(&ffn.mul(alpha)?)
    }

    fn full_heads<T: Real>(&self, p: &Bound<T>, xn: &Tensor<T>) -> Result<Tensor<T>> {
        let (d, d_h) = (self.config.d_model, self.config.d_head());
        let q = self.q.forward(p, xn)?;
        let kv = self.kv.forward(p, xn)?;
        let mut outs = Vec::with_capacity(self.config.n_heads);
        for t in 0..self.config.n_heads {
            let cols = t * d_h..(t + 1) * d_h;
            outs.push(scaled_dot_attention(
                &q.slice_cols(cols.start, cols.end)?,
                &kv.slice_cols(cols.start, cols.end)?,
                &kv.slice_cols(d + cols.start, d + cols.end)?,
            )?);
        }
        Tensor::concat_cols(&outs.iter().collect::<Vec<_>>())
    }

    fn sampled_heads<T: Real>(
        &self,
        p: &Bound<T>,
        sp: &SamplerParams,
        x: &Tensor<T>,
        xn: &Tensor<T>,
        ctx: &mut ForwardCtx,
        mut trace: Option<&mut HeadSelections>,
    ) -> Result<Tensor<T>> {
        let cfg = &self.config;
        let (d, d_h, h) = (cfg.d_model, cfg.d_head(), cfg.n_heads);
        let n = x.shape()[0];
        let q = self.q.forward(p, xn)?;
        let kv = self.kv.forward(p, xn)?;
        let score_in = match cfg.score_input {
            ScoreInput::Raw => x,
            ScoreInput::Normalized => xn,
        };
        let mut z = sp.score.forward(p, score_in)?;
        let base = match ctx.train_rng() {
            Some(rng) => {
                z = z.add(&Tensor::constant(gumbel_noise(rng, &[n, h])))?;
                Some(rng.fork_seed())
            }
            None => None,
        };
        let pool = Tensor::concat_rows(&[&kv, p.get(sp.p_supp)])?;
        let z_pool = Tensor::concat_rows(&[&z, p.get(sp.z_supp)])?;
        let m = pool.shape()[0];
        let sampler = cfg.sampler();

        let mut outs = Vec::with_capacity(h);
        for t in 0..h {
            let cols = t * d_h..(t + 1) * d_h;
            let zt = z_pool.slice_cols(t, t + 1)?.reshape(&[m])?;
            let pt = Tensor::concat_cols(&[
                &pool.slice_cols(cols.start, cols.end)?,
                &pool.slice_cols(d + cols.start, d + cols.end)?,
            ])?;
            let mut head_rng = base.map(|s| GumbelRng::with_stream(s, t as u64));
            let sample = sample_without_replacement(&zt, &pt, cfg.k, &sampler, head_rng.as_mut())?;
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(sample.selected.clone());
            }
            let keys = sample.rows.slice_cols(0, d_h)?;
            let values = sample.rows.slice_cols(d_h, 2 * d_h)?;
            outs.push(scaled_dot_attention(
                &q.slice_cols(cols.start, cols.end)?,
                &keys,
                &values,
            )?);
        }
        Tensor::concat_cols(&outs.iter().collect::<Vec<_>>())
    }
}
