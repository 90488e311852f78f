//! Primitive operators and their backward rules.

use crate::error::{Error, Result};
use crate::real::Real;

use super::{Array, Tensor};

/// Broadcasting is allowed only over leading extents: `rhs.shape` must be a
/// suffix of `lhs.shape`.
fn check_broadcast(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<usize> {
    if rhs.len() > lhs.len() || lhs[lhs.len() - rhs.len()..] != *rhs {
        return Err(Error::shape(op, lhs, rhs));
    }
    let inner: usize = rhs.iter().product();
    Ok(lhs
        .iter()
        .product::<usize>()
        .checked_div(inner)
        .unwrap_or(0))
}

/// Sums `g` (shape of lhs) down to the broadcast rhs shape.
fn reduce_to<T: Real>(g: &Array<T>, shape: &[usize]) -> Array<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let inner: usize = shape.iter().product();
    let mut out = vec![T::zero(); inner];
    for chunk in g.data().chunks(inner.max(1)) {
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    Array::from_parts(shape.to_vec(), out)
}

fn binary_broadcast<T: Real>(a: &Array<T>, b: &Array<T>, f: impl Fn(T, T) -> T) -> Array<T> {
    let inner = b.numel().max(1);
    let data = a
        .data()
        .chunks(inner)
        .flat_map(|chunk| chunk.iter().zip(b.data()).map(|(&x, &y)| f(x, y)))
        .collect();
    Array::from_parts(a.shape().to_vec(), data)
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let u = C * (x + 0.044_715 * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let du = C * (1.0 + 3.0 * 0.044_715 * x * x);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    (y, dy)
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softmax_rows<T: Real>(x: &Array<T>) -> Array<T> {
    let w = x.shape().last().copied().unwrap_or(1);
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(w.max(1)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Backward of a row-wise softmax given its output `y`.
pub(crate) fn softmax_rows_backward<T: Real>(y: &Array<T>, g: &Array<T>) -> Array<T> {
    let w = y.shape().last().copied().unwrap_or(1).max(1);
    let mut out = Vec::with_capacity(y.numel());
    for (yr, gr) in y.data().chunks(w).zip(g.data().chunks(w)) {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        out.extend(yr.iter().zip(gr).map(|(&a, &b)| a * (b - dot)));
    }
    Array::from_parts(y.shape().to_vec(), out)
}

impl<T: Real> Tensor<T> {
    fn unary(
        &self,
        name: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Tensor<T> {
        let value = self.value().map(f);
        Tensor::from_op(
            name,
            &[self],
            value,
            Box::new(move |ins, out, g| {
                let data = ins[0]
                    .data()
                    .iter()
                    .zip(out.data())
                    .zip(g.data())
                    .map(|((&x, &y), &gv)| gv * df(x, y))
                    .collect();
                vec![Some(Array::from_parts(ins[0].shape().to_vec(), data))]
            }),
        )
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        check_broadcast("add", self.shape(), rhs.shape())?;
        let value = binary_broadcast(self.value(), rhs.value(), |a, b| a + b);
        Ok(Tensor::from_op(
            "add",
            &[self, rhs],
            value,
            Box::new(|ins, _, g| vec![Some(g.clone()), Some(reduce_to(g, ins[1].shape()))]),
        ))
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        check_broadcast("sub", self.shape(), rhs.shape())?;
        let value = binary_broadcast(self.value(), rhs.value(), |a, b| a - b);
        Ok(Tensor::from_op(
            "sub",
            &[self, rhs],
            value,
            Box::new(|ins, _, g| {
                let gb = reduce_to(g, ins[1].shape()).map(|v| -v);
                vec![Some(g.clone()), Some(gb)]
            }),
        ))
    }

    /// Elementwise product; `rhs` may broadcast over leading extents.
    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        check_broadcast("mul", self.shape(), rhs.shape())?;
        let value = binary_broadcast(self.value(), rhs.value(), |a, b| a * b);
        Ok(Tensor::from_op(
            "mul",
            &[self, rhs],
            value,
            Box::new(|ins, _, g| {
                let ga = binary_broadcast(g, ins[1], |gv, b| gv * b);
                let gb_full = g.zip_map(ins[0], |gv, a| gv * a);
                vec![Some(ga), Some(reduce_to(&gb_full, ins[1].shape()))]
            }),
        ))
    }

    pub fn scale(&self, c: f64) -> Tensor<T> {
        let c = T::of(c);
        self.unary("scale", |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<T> {
        let c = T::of(c);
        self.unary("add_scalar", |x| x + c, |_, _| T::one())
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary("neg", |x| -x, |_, _| -T::one())
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary("exp", |x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Tensor<T> {
        self.unary("ln", |x| x.ln(), |x, _| T::one() / x)
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary("sigmoid", sigmoid, |_, y| y * (T::one() - y))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor<T> {
        self.unary(
            "gelu",
            |x| T::of(gelu_parts(x.as_f64()).0),
            |x, _| T::of(gelu_parts(x.as_f64()).1),
        )
    }

    pub fn sum(&self) -> Tensor<T> {
        let value = Array::scalar(self.value().sum());
        Tensor::from_op(
            "sum",
            &[self],
            value,
            Box::new(|ins, _, g| vec![Some(Array::full(ins[0].shape(), g.item()))]),
        )
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = self.value().numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// Sums over the first extent: `[n, ...] -> [...]`.
    pub fn sum_rows(&self) -> Tensor<T> {
        let v = self.value();
        let w = v.row_width();
        let mut out = vec![T::zero(); w];
        for r in 0..v.rows() {
            for (o, &x) in out.iter_mut().zip(v.row(r)) {
                *o += x;
            }
        }
        let shape = v.shape()[1.min(v.ndim())..].to_vec();
        Tensor::from_op(
            "sum_rows",
            &[self],
            Array::from_parts(shape, out),
            Box::new(|ins, _, g| {
                let rows = ins[0].rows();
                let data = (0..rows).flat_map(|_| g.data().iter().copied()).collect();
                vec![Some(Array::from_parts(ins[0].shape().to_vec(), data))]
            }),
        )
    }

    pub fn mean_rows(&self) -> Tensor<T> {
        let n = self.value().rows().max(1);
        self.sum_rows().scale(1.0 / n as f64)
    }

    /// 2-D matrix product.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (a, b) = (self.shape(), rhs.shape());
        if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
            return Err(Error::shape("matmul", a, b));
        }
        let value = Array::matmul_t(self.value(), false, rhs.value(), false);
        Ok(Tensor::from_op(
            "matmul",
            &[self, rhs],
            value,
            Box::new(|ins, _, g| {
                let ga = Array::matmul_t(g, false, ins[1], true);
                let gb = Array::matmul_t(ins[0], true, g, false);
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    /// 2-D transpose.
    pub fn t(&self) -> Result<Tensor<T>> {
        if self.value().ndim() != 2 {
            return Err(Error::shape("transpose", self.shape(), &[]));
        }
        Ok(Tensor::from_op(
            "transpose",
            &[self],
            self.value().transpose2(),
            Box::new(|_, _, g| vec![Some(g.transpose2())]),
        ))
    }

    pub fn softmax_lastdim(&self) -> Tensor<T> {
        Tensor::from_op(
            "softmax",
            &[self],
            softmax_rows(self.value()),
            Box::new(|_, y, g| vec![Some(softmax_rows_backward(y, g))]),
        )
    }

    pub fn log_softmax_lastdim(&self) -> Tensor<T> {
        let x = self.value();
        let w = x.shape().last().copied().unwrap_or(1).max(1);
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(w) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Tensor::from_op(
            "log_softmax",
            &[self],
            out,
            Box::new(move |_, y, g| {
                let mut data = Vec::with_capacity(y.numel());
                for (yr, gr) in y.data().chunks(w).zip(g.data().chunks(w)) {
                    let gs: T = gr.iter().copied().sum();
                    data.extend(yr.iter().zip(gr).map(|(&l, &gv)| gv - l.exp() * gs));
                }
                vec![Some(Array::from_parts(y.shape().to_vec(), data))]
            }),
        )
    }

    /// Root-mean-square normalization over the last extent followed by an
    /// elementwise gain: `x / sqrt(mean(x^2) + eps) * gain`.
    pub fn rms_norm(&self, gain: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        let d = self.shape().last().copied().unwrap_or(0);
        if gain.shape() != [d] || d == 0 {
            return Err(Error::shape("rms_norm", self.shape(), gain.shape()));
        }
        let eps = T::of(eps);
        let x = self.value();
        let inv = move |row: &[T]| {
            let ms = row.iter().map(|&v| v * v).sum::<T>() / T::of(d as f64);
            T::one() / (ms + eps).sqrt()
        };
        let mut out = Vec::with_capacity(x.numel());
        for row in x.data().chunks(d) {
            let r = inv(row);
            out.extend(row.iter().zip(gain.data()).map(|(&v, &gn)| v * r * gn));
        }
        Ok(Tensor::from_op(
            "rms_norm",
            &[self, gain],
            Array::from_parts(x.shape().to_vec(), out),
            Box::new(move |ins, _, g| {
                let (x, gain) = (ins[0], ins[1]);
                let mut gx = Vec::with_capacity(x.numel());
                let mut ggain = vec![T::zero(); d];
                let df = T::of(d as f64);
                for (row, grow) in x.data().chunks(d).zip(g.data().chunks(d)) {
                    let r = inv(row);
                    let mut dot = T::zero();
                    for c in 0..d {
                        let gu = grow[c] * gain.data()[c];
                        dot += gu * row[c];
                        ggain[c] += grow[c] * row[c] * r;
                    }
                    let coeff = dot * r * r * r / df;
                    for c in 0..d {
                        gx.push(grow[c] * gain.data()[c] * r - row[c] * coeff);
                    }
                }
                vec![
                    Some(Array::from_parts(x.shape().to_vec(), gx)),
                    Some(Array::from_parts(vec![d], ggain)),
                ]
            }),
        ))
    }

    /// Selects rows by index; backward scatter-adds into the source rows.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor<T>> {
        let v = self.value();
        let rows = v.rows();
        if v.ndim() == 0 {
            return Err(Error::shape("gather_rows", v.shape(), &[]));
        }
        let w = v.row_width();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            if i >= rows {
                return Err(Error::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    extent: rows,
                });
            }
            data.extend_from_slice(v.row(i));
        }
        let mut shape = v.shape().to_vec();
        shape[0] = idx.len();
        let idx = idx.to_vec();
        Ok(Tensor::from_op(
            "gather_rows",
            &[self],
            Array::from_parts(shape, data),
            Box::new(move |ins, _, g| {
                let mut out = Array::zeros(ins[0].shape());
                for (m, &i) in idx.iter().enumerate() {
                    for (o, &gv) in out.row_mut(i).iter_mut().zip(g.row(m)) {
                        *o += gv;
                    }
                }
                vec![Some(out)]
            }),
        ))
    }

    /// Stacks tensors along the first extent.
    pub fn concat_rows(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Config("concat_rows of nothing".into()))?;
        let tail = &first.shape()[1.min(first.shape().len())..];
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.value().ndim() == 0 || &p.shape()[1..] != tail {
                return Err(Error::shape("concat_rows", first.shape(), p.shape()));
            }
            rows += p.shape()[0];
            data.extend_from_slice(p.data());
        }
        let mut shape = first.shape().to_vec();
        shape[0] = rows;
        Ok(Tensor::from_op(
            "concat_rows",
            parts,
            Array::from_parts(shape, data),
            Box::new(|ins, _, g| {
                let mut offset = 0;
                ins.iter()
                    .map(|a| {
                        let len = a.numel();
                        let part = g.data()[offset..offset + len].to_vec();
                        offset += len;
                        Some(Array::from_parts(a.shape().to_vec(), part))
                    })
                    .collect()
            }),
        ))
    }

    /// Joins 2-D tensors side by side.
    pub fn concat_cols(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Config("concat_cols of nothing".into()))?;
        let rows = first.shape().first().copied().unwrap_or(0);
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            if p.value().ndim() != 2 || p.shape()[0] != rows {
                return Err(Error::shape("concat_cols", first.shape(), p.shape()));
            }
            widths.push(p.shape()[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.value().row(r));
            }
        }
        Ok(Tensor::from_op(
            "concat_cols",
            parts,
            Array::from_parts(vec![rows, total], data),
            Box::new(move |_, _, g| {
                let mut offset = 0;
                widths
                    .iter()
                    .map(|&w| {
                        let mut part = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            part.extend_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        offset += w;
                        Some(Array::from_parts(vec![rows, w], part))
                    })
                    .collect()
            }),
        ))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor<T>> {
        let v = self.value();
        if v.ndim() != 2 || start > end || end > v.shape()[1] {
            return Err(Error::shape("slice_cols", v.shape(), &[start, end]));
        }
        let rows = v.shape()[0];
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&v.row(r)[start..end]);
        }
        Ok(Tensor::from_op(
            "slice_cols",
            &[self],
            Array::from_parts(vec![rows, end - start], data),
            Box::new(move |ins, _, g| {
                let mut out = Array::zeros(ins[0].shape());
                for r in 0..rows {
                    out.row_mut(r)[start..end].copy_from_slice(g.row(r));
                }
                vec![Some(out)]
            }),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let value = self.value().clone().reshape(shape)?;
        Ok(Tensor::from_op(
            "reshape",
            &[self],
            value,
            Box::new(|ins, _, g| vec![Some(g.clone().reshape(ins[0].shape()).unwrap())]),
        ))
    }

    /// Mean cross-entropy of `[b, c]` logits against class labels.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor<T>> {
        let v = self.value();
        if v.ndim() != 2 || v.shape()[0] != labels.len() {
            return Err(Error::shape("cross_entropy", v.shape(), &[labels.len()]));
        }
        let c = v.shape()[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::IndexOutOfRange {
                op: "cross_entropy",
                index: bad,
                extent: c,
            });
        }
        let logp = self.log_softmax_lastdim();
        let picked: Vec<usize> = labels.iter().enumerate().map(|(r, &l)| r * c + l).collect();
        let b = labels.len();
        let loss = -picked.iter().map(|&p| logp.data()[p]).sum::<T>() / T::of(b as f64);
        Ok(Tensor::from_op(
            "nll",
            &[&logp],
            Array::scalar(loss),
            Box::new(move |ins, _, g| {
                let mut out = Array::zeros(ins[0].shape());
                let s = -g.item() / T::of(b as f64);
                for &p in &picked {
                    out.data_mut()[p] = s;
                }
                vec![Some(out)]
            }),
        ))
    }

    /// Mean smooth-L1 (Huber with unit threshold) against a constant target.
    pub fn smooth_l1(&self, target: &Array<T>) -> Result<Tensor<T>> {
        if self.shape() != target.shape() {
            return Err(Error::shape("smooth_l1", self.shape(), target.shape()));
        }
        let n = T::of(self.value().numel().max(1) as f64);
        let half = T::of(0.5);
        let loss = self
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let d = (p - t).abs();
                if d < T::one() {
                    half * d * d
                } else {
                    d - half
                }
            })
            .sum::<T>()
            / n;
        let target = target.clone();
        Ok(Tensor::from_op(
            "smooth_l1",
            &[self],
            Array::scalar(loss),
            Box::new(move |ins, _, g| {
                let s = g.item() / n;
                let grad = ins[0].zip_map(&target, |p, t| {
                    let d = p - t;
                    s * if d.abs() < T::one() { d } else { d.signum() }
                });
                vec![Some(grad)]
            }),
        ))
    }
}
