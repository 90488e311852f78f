//! AdamW with global gradient-norm clipping, and the warmup + cosine
//! learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::real::Real;

use super::Array;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global L2 norm threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: Some(2.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Applied {
        grad_norm: f64,
        clipped: bool,
    },
    /// A gradient entry was NaN or infinite; parameters and moments untouched.
    SkippedNonFinite,
}

#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Array<T>>,
    second: Vec<Array<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new<'a>(config: AdamWConfig, params: impl IntoIterator<Item = &'a Array<T>>) -> Self {
        let (first, second) = params
            .into_iter()
            .map(|p| (Array::zeros(p.shape()), Array::zeros(p.shape())))
            .unzip();
        Self {
            config,
            step: 0,
            first,
            second,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One AdamW update: clip the global gradient norm, decay parameters by
    /// `lr * weight_decay`, then apply bias-corrected moment estimates.
    pub fn step(&mut self, params: &mut [Array<T>], grads: &[Array<T>]) -> StepOutcome {
        assert_eq!(params.len(), self.first.len(), "parameter count changed");
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");

        if !grads.iter().all(Array::is_finite) {
            log::warn!(
                "non-finite gradient at step {}; update skipped",
                self.step + 1
            );
            return StepOutcome::SkippedNonFinite;
        }

        let grad_norm = grads.iter().map(Array::sq_norm).sum::<f64>().sqrt();
        let clip_scale = match self.config.clip_norm {
            Some(max) if grad_norm > max => max / grad_norm,
            _ => 1.0,
        };

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let decay = T::of(1.0 - c.lr * c.weight_decay);
        let lr = T::of(c.lr);
        let eps = T::of(c.eps);
        let scale = T::of(clip_scale);

        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            debug_assert_eq!(p.shape(), g.shape());
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gv = gv * scale;
                *pv *= decay;
                *mv = b1 * *mv + one_b1 * gv;
                *vv = b2 * *vv + one_b2 * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        StepOutcome::Applied {
            grad_norm,
            clipped: clip_scale < 1.0,
        }
    }
}

/// Linear warmup from 0 to `peak_lr` over `warmup_steps`, then cosine decay
/// to 0 at `total_steps`. Steps outside `[0, total_steps]` are clamped.
pub fn cosine_warmup_lr(step: u64, warmup_steps: u64, total_steps: u64, peak_lr: f64) -> f64 {
    let step = step.min(total_steps);
    if step < warmup_steps {
        return peak_lr * step as f64 / warmup_steps as f64;
    }
    let span = total_steps.saturating_sub(warmup_steps);
    if span == 0 {
        return peak_lr;
    }
    let progress = (step - warmup_steps) as f64 / span as f64;
    peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_only_with_zero_gradients() {
        let cfg = AdamWConfig {
            lr: 0.001,
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut params = vec![Array::<f64>::vector(vec![1.0, -2.0, 4.0])];
        let mut opt = OptimizerState::new(cfg, &params);
        let grads = vec![Array::zeros(&[3])];
        opt.step(&mut params, &grads);
        let f = 1.0 - 0.001 * 0.1;
        assert_eq!(params[0].data(), &[f, -2.0 * f, 4.0 * f]);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn clipping_halves_gradient_of_norm_four() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let params0 = vec![Array::<f64>::vector(vec![0.0, 0.0])];
        let mut clipped = params0.clone();
        let mut opt = OptimizerState::new(cfg, &clipped);
        // norm 4 -> scaled to norm 2, i.e. halved
        let out = opt.step(&mut clipped, &[Array::vector(vec![4.0 * 0.6, 4.0 * 0.8])]);
        assert!(
            matches!(out, StepOutcome::Applied { clipped: true, grad_norm } if (grad_norm - 4.0).abs() < 1e-12)
        );

        let mut manual = params0.clone();
        let mut opt2 = OptimizerState::new(
            AdamWConfig {
                clip_norm: None,
                ..cfg
            },
            &manual,
        );
        opt2.step(&mut manual, &[Array::vector(vec![2.0 * 0.6, 2.0 * 0.8])]);
        assert_eq!(clipped[0], manual[0]);
        assert_eq!(opt.first[0].data(), opt2.first[0].data());
    }

    #[test]
    fn zero_lr_is_identity() {
        let cfg = AdamWConfig {
            lr: 0.0,
            ..Default::default()
        };
        let mut params = vec![Array::<f32>::vector(vec![0.3, -0.7])];
        let before = params.clone();
        let mut opt = OptimizerState::new(cfg, &params);
        for _ in 0..5 {
            opt.step(&mut params, &[Array::vector(vec![1.0, -3.0])]);
        }
        assert_eq!(params, before);
    }

    #[test]
    fn non_finite_gradient_skips() {
        let mut params = vec![Array::<f64>::vector(vec![1.0])];
        let mut opt = OptimizerState::new(AdamWConfig::default(), &params);
        let out = opt.step(&mut params, &[Array::vector(vec![f64::NAN])]);
        assert_eq!(out, StepOutcome::SkippedNonFinite);
        assert_eq!(params[0].data(), &[1.0]);
        assert_eq!(opt.step_count(), 0);
    }

    /// Scalar AdamW written out directly from the update recurrence.
    fn reference_trajectory(p0: f64, grads: &[f64], c: AdamWConfig) -> Vec<f64> {
        let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
        let mut out = Vec::new();
        for (t, &g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            p -= c.lr * c.weight_decay * p;
            m = c.beta1 * m + (1.0 - c.beta1) * g;
            v = c.beta2 * v + (1.0 - c.beta2) * g * g;
            let mh = m / (1.0 - c.beta1.powi(t));
            let vh = v / (1.0 - c.beta2.powi(t));
            p -= c.lr * mh / (vh.sqrt() + c.eps);
            out.push(p);
        }
        out
    }

    #[test]
    fn scalar_trajectory_matches_reference() {
        let cfg = AdamWConfig {
            lr: 0.01,
            weight_decay: 0.05,
            clip_norm: None,
            ..Default::default()
        };
        let grads = [0.5, -1.0, 0.25, 2.0, -0.125, 0.0, 1.5];
        let expected = reference_trajectory(1.0, &grads, cfg);
        let mut params = vec![Array::<f64>::scalar(1.0)];
        let mut opt = OptimizerState::new(cfg, &params);
        for (g, want) in grads.iter().zip(expected) {
            opt.step(&mut params, &[Array::scalar(*g)]);
            assert!((params[0].item() - want).abs() < 1e-14);
        }
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(cosine_warmup_lr(0, 100, 1000, 1e-3), 0.0);
        assert_eq!(cosine_warmup_lr(100, 100, 1000, 1e-3), 1e-3);
        assert!((cosine_warmup_lr(550, 100, 1000, 1e-3) - 0.5e-3).abs() < 1e-15);
        assert!(cosine_warmup_lr(1000, 100, 1000, 1e-3).abs() < 1e-15);
        assert!(cosine_warmup_lr(5000, 100, 1000, 1e-3).abs() < 1e-15);
    }
}
