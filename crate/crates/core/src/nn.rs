//! Parameter storage and small building blocks shared by the models.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gumbel::GumbelRng;
use crate::real::Real;
use crate::tensor::{Array, Tensor};

/// Handle to one entry of a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named parameter values.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Array<T>>,
}

/// How a fresh parameter is initialized.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Uniform on `[-bound, bound]`.
    Uniform(f64),
    Normal(f64),
}

/// Deterministic per-name stream: identical names get identical initial
/// values under the same seed, independent of creation order.
fn name_stream(seed: u64, name: &str) -> GumbelRng {
    let digest = Sha256::digest(name.as_bytes());
    let stream = u64::from_le_bytes(digest[..8].try_into().unwrap());
    GumbelRng::with_stream(seed, stream)
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn init(&mut self, seed: u64, name: &str, shape: &[usize], init: Init) -> ParamId {
        let mut rng = name_stream(seed, name);
        let value = match init {
            Init::Zeros => Array::zeros(shape),
            Init::Constant(c) => Array::full(shape, T::of(c)),
            Init::Uniform(b) => {
                Array::from_fn(shape, |_| T::of((2.0 * rng.uniform_open() - 1.0) * b))
            }
            Init::Normal(s) => Array::from_fn(shape, |_| T::of(rng.normal() * s)),
        };
        self.add(name, value)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn values(&self) -> &[Array<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array<T>] {
        &mut self.values
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Array<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Array::numel).sum()
    }

    /// Replaces values by name; every stored parameter must be present with
    /// the same shape.
    pub fn load_named(&mut self, named: Vec<(String, Array<T>)>) -> Result<()> {
        if named.len() != self.values.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.values.len(),
                named.len()
            )));
        }
        for (name, value) in named {
            let id = self
                .id_of(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {name}")))?;
            if value.shape() != self.values[id.0].shape() {
                return Err(Error::shape(
                    "load_named",
                    self.values[id.0].shape(),
                    value.shape(),
                ));
            }
            self.values[id.0] = value;
        }
        Ok(())
    }

    /// Wraps every value in a leaf tensor for one forward pass.
    pub fn bind(&self, requires_grad: bool) -> Bound<T> {
        Bound {
            tensors: self
                .values
                .iter()
                .map(|v| Tensor::leaf(v.clone(), requires_grad))
                .collect(),
        }
    }
}

/// Parameter leaves of one graph, indexed by [`ParamId`].
pub struct Bound<T> {
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Bound<T> {
    /// Binds tensors in parameter-id order, e.g. leaves built by a checker.
    pub fn from_tensors(tensors: Vec<Tensor<T>>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    /// Gradients after a backward pass; zeros for parameters the loss did
    /// not reach.
    pub fn grads(&self) -> Vec<Array<T>> {
        self.tensors
            .iter()
            .map(|t| {
                t.grad()
                    .map_or_else(|| Array::zeros(t.shape()), |g| g.clone())
            })
            .collect()
    }
}

/// Per-forward state: mode flag and the noise stream.
pub struct ForwardCtx {
    pub train: bool,
    pub rng: GumbelRng,
    /// Draw graph positional-encoding noise outside training too.
    pub pe_noise_at_eval: bool,
}

impl ForwardCtx {
    pub fn train(seed: u64) -> Self {
        Self {
            train: true,
            rng: GumbelRng::new(seed),
            pe_noise_at_eval: true,
        }
    }

    pub fn eval(seed: u64) -> Self {
        Self {
            train: false,
            rng: GumbelRng::new(seed),
            pe_noise_at_eval: true,
        }
    }

    /// The noise stream while training, `None` in eval.
    pub fn train_rng(&mut self) -> Option<&mut GumbelRng> {
        if self.train {
            Some(&mut self.rng)
        } else {
            None
        }
    }

    pub fn pe_rng(&mut self) -> Option<&mut GumbelRng> {
        if self.train || self.pe_noise_at_eval {
            Some(&mut self.rng)
        } else {
            None
        }
    }

    /// Inverted dropout; identity in eval or for `p == 0`.
    pub fn dropout<T: Real>(&mut self, x: &Tensor<T>, p: f64) -> Result<Tensor<T>> {
        if !self.train || p <= 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 / (1.0 - p);
        let rng = &mut self.rng;
        let mask = Array::from_fn(x.shape(), |_| {
            if rng.bernoulli(p) {
                T::zero()
            } else {
                T::of(keep)
            }
        });
        x.mul(&Tensor::constant(mask))
    }

    /// Stochastic depth for one sample: drops the whole branch with
    /// probability `p`, rescaling it otherwise.
    pub fn drop_path<T: Real>(&mut self, x: &Tensor<T>, p: f64) -> Result<Tensor<T>> {
        if !self.train || p <= 0.0 {
            return Ok(x.clone());
        }
        let s = if self.rng.bernoulli(p) {
            0.0
        } else {
            1.0 / (1.0 - p)
        };
        x.mul(&Tensor::scalar(T::of(s)))
    }
}

/// Affine map `x W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        seed: u64,
        name: &str,
        d_in: usize,
        d_out: usize,
    ) -> Self {
        let bound = 1.0 / (d_in.max(1) as f64).sqrt();
        let w = store.init(
            seed,
            &format!("{name}.w"),
            &[d_in, d_out],
            Init::Uniform(bound),
        );
        let b = store.init(seed, &format!("{name}.b"), &[d_out], Init::Zeros);
        Self { w, b, d_in, d_out }
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.matmul(p.get(self.w))?.add(p.get(self.b))
    }
}

/// Two affine maps with a GELU between them.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        seed: u64,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
    ) -> Self {
        Self {
            first: Linear::new(store, seed, &format!("{name}.0"), d_in, d_hidden),
            second: Linear::new(store, seed, &format!("{name}.1"), d_hidden, d_out),
        }
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.second.forward(p, &self.first.forward(p, x)?.gelu())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_depends_on_name_not_order() {
        let mut a = ParamStore::<f64>::new();
        let mut b = ParamStore::<f64>::new();
        a.init(3, "x", &[4], Init::Normal(1.0));
        let ya = a.init(3, "y", &[4], Init::Normal(1.0));
        let yb = b.init(3, "y", &[4], Init::Normal(1.0));
        assert_eq!(a.get(ya), b.get(yb));
        assert_ne!(a.get(ya), a.get(ParamId(0)));
    }

    #[test]
    fn eval_dropout_is_identity() {
        let x = Tensor::constant(Array::<f32>::ones(&[3, 3]));
        let mut ctx = ForwardCtx::eval(0);
        assert_eq!(ctx.dropout(&x, 0.5).unwrap().data(), x.data());
        assert_eq!(ctx.drop_path(&x, 0.5).unwrap().data(), x.data());
    }

    #[test]
    fn load_named_checks_shapes() {
        let mut s = ParamStore::<f64>::new();
        s.add("a", Array::zeros(&[2]));
        assert!(s
            .load_named(vec![("a".into(), Array::zeros(&[3]))])
            .is_err());
        assert!(s
            .load_named(vec![("b".into(), Array::zeros(&[2]))])
            .is_err());
        s.load_named(vec![("a".into(), Array::ones(&[2]))]).unwrap();
        assert_eq!(s.values()[0].data(), &[1.0, 1.0]);
    }
}
