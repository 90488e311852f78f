//! Gumbel noise and the soft / straight-through relaxations built on it.
//!
//! Every operator takes its noise source as `Option<&mut GumbelRng>`:
//! `None` means noise off (deterministic), which callers bind to eval mode.
//!
//! The sigmoid relaxations use the increasing convention
//! `sigmoid((logit + g) / tau)`, and the hard sigmoid emits 1 for
//! `logit + g >= 0`, so a positive comparison margin selects.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::ops::{sigmoid, softmax_rows_backward};
use crate::tensor::{Array, CustomOp, Tensor};

pub const ST_GUMBEL_SOFTMAX: &str = "st_gumbel_softmax";
pub const ST_GUMBEL_SIGMOID: &str = "st_gumbel_sigmoid";

/// Seeded, caller-owned random stream. Counts the scalar draws it hands out.
#[derive(Debug, Clone)]
pub struct GumbelRng {
    rng: ChaCha8Rng,
    draws: u64,
}

impl GumbelRng {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            draws: 0,
        }
    }

    /// Independent stream `stream` of the generator seeded by `seed`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, draws: 0 }
    }

    /// A child generator seeded from this one.
    pub fn fork(&mut self) -> Self {
        Self::new(self.fork_seed())
    }

    /// A fresh seed drawn from this stream.
    pub fn fork_seed(&mut self) -> u64 {
        self.draws += 1;
        self.rng.next_u64()
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        self.draws += 1;
        loop {
            let u: f64 = self.rng.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn gumbel(&mut self) -> f64 {
        gumbel_from_uniform(self.uniform_open())
    }

    pub fn normal(&mut self) -> f64 {
        self.draws += 1;
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.draws += 1;
        self.rng.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform_open() < p
    }
}

/// Gumbel(0, 1) quantile: `-ln(-ln u)`.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

/// Positive relaxation temperature.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub const ONE: Temperature = Temperature(1.0);

    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau.is_finite() {
            Ok(Self(tau))
        } else {
            Err(Error::Config(format!(
                "temperature must be positive, got {tau}"
            )))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self::ONE
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

/// I.i.d. Gumbel(0, 1) values of the given shape, as constants.
pub fn gumbel_noise<T: Real>(rng: &mut GumbelRng, shape: &[usize]) -> Array<T> {
    Array::from_fn(shape, |_| T::of(rng.gumbel()))
}

fn maybe_noise<T: Real>(rng: Option<&mut GumbelRng>, shape: &[usize]) -> Option<Array<T>> {
    rng.map(|r| gumbel_noise(r, shape))
}

fn noised<T: Real>(logits: &Array<T>, noise: Option<&Array<T>>) -> Array<T> {
    match noise {
        Some(g) => logits.zip_map(g, |a, b| a + b),
        None => logits.clone(),
    }
}

fn check_finite<T: Real>(what: &'static str, t: &Tensor<T>) -> Result<()> {
    if t.value().is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// `softmax((logits + g) / tau)` over the last extent.
pub fn gumbel_softmax<T: Real>(
    logits: &Tensor<T>,
    tau: Temperature,
    rng: Option<&mut GumbelRng>,
) -> Result<Tensor<T>> {
    check_finite("gumbel_softmax logits", logits)?;
    let x = match maybe_noise::<T>(rng, logits.shape()) {
        Some(g) => logits.add(&Tensor::constant(g))?,
        None => logits.clone(),
    };
    Ok(x.scale(1.0 / tau.get()).softmax_lastdim())
}

/// One-hot at `argmax(logits + g)` per row, ties to the lowest index; the
/// backward pass is the Jacobian of [`gumbel_softmax`] at the same noise.
pub fn st_gumbel_softmax<T: Real>(
    logits: &Tensor<T>,
    tau: Temperature,
    rng: Option<&mut GumbelRng>,
) -> Result<Tensor<T>> {
    check_finite("st_gumbel_softmax logits", logits)?;
    let noise = maybe_noise(rng, logits.shape());
    Tensor::apply_custom(StGumbelSoftmax { noise, tau }, &[logits])
}

/// `sigmoid((logit + g) / tau)`, elementwise.
pub fn gumbel_sigmoid<T: Real>(
    logits: &Tensor<T>,
    tau: Temperature,
    rng: Option<&mut GumbelRng>,
) -> Result<Tensor<T>> {
    check_finite("gumbel_sigmoid logits", logits)?;
    let x = match maybe_noise::<T>(rng, logits.shape()) {
        Some(g) => logits.add(&Tensor::constant(g))?,
        None => logits.clone(),
    };
    Ok(x.scale(1.0 / tau.get()).sigmoid())
}

/// `1` where `logit + g >= 0`, else `0`; backward is the derivative of
/// [`gumbel_sigmoid`] at the same noise.
pub fn st_gumbel_sigmoid<T: Real>(
    logits: &Tensor<T>,
    tau: Temperature,
    rng: Option<&mut GumbelRng>,
) -> Result<Tensor<T>> {
    check_finite("st_gumbel_sigmoid logits", logits)?;
    let noise = maybe_noise(rng, logits.shape());
    Tensor::apply_custom(StGumbelSigmoid { noise, tau }, &[logits])
}

/// Index of the largest entry, lowest index on ties.
pub(crate) fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub struct StGumbelSoftmax<T> {
    pub noise: Option<Array<T>>,
    pub tau: Temperature,
}

impl<T: Real> CustomOp<T> for StGumbelSoftmax<T> {
    fn name(&self) -> &'static str {
        ST_GUMBEL_SOFTMAX
    }

    fn forward(&self, inputs: &[&Array<T>]) -> Result<Array<T>> {
        let x = noised(inputs[0], self.noise.as_ref());
        let w = x.shape().last().copied().unwrap_or(1).max(1);
        let mut out = Array::zeros(x.shape());
        for (row, orow) in x.data().chunks(w).zip(out.data_mut().chunks_mut(w)) {
            orow[argmax(row)] = T::one();
        }
        Ok(out)
    }

    fn backward(
        &self,
        inputs: &[&Array<T>],
        _: &Array<T>,
        grad: &Array<T>,
    ) -> Vec<Option<Array<T>>> {
        let inv_tau = T::of(1.0 / self.tau.get());
        let z = noised(inputs[0], self.noise.as_ref()).map(|v| v * inv_tau);
        let y = Tensor::constant(z).softmax_lastdim();
        let mut g = softmax_rows_backward(y.value(), grad);
        g.scale_in_place(inv_tau);
        vec![Some(g)]
    }
}

pub struct StGumbelSigmoid<T> {
    pub noise: Option<Array<T>>,
    pub tau: Temperature,
}

impl<T: Real> CustomOp<T> for StGumbelSigmoid<T> {
    fn name(&self) -> &'static str {
        ST_GUMBEL_SIGMOID
    }

    fn forward(&self, inputs: &[&Array<T>]) -> Result<Array<T>> {
        Ok(noised(inputs[0], self.noise.as_ref()).map(|v| {
            if v >= T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }))
    }

    fn backward(
        &self,
        inputs: &[&Array<T>],
        _: &Array<T>,
        grad: &Array<T>,
    ) -> Vec<Option<Array<T>>> {
        let inv_tau = T::of(1.0 / self.tau.get());
        let x = noised(inputs[0], self.noise.as_ref());
        let g = x.zip_map(grad, |v, gv| {
            let s = sigmoid(v * inv_tau);
            gv * s * (T::one() - s) * inv_tau
        });
        vec![Some(g)]
    }
}
