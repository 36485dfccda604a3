//! SGD and Adam update rules with global-norm gradient clipping.

use crate::error::{Error, Result};
use crate::params::zeros_like;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

pub const DEFAULT_CLIP_NORM: f64 = 1.0;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_norm: Option<f64>,
    pub step_count: u64,
    /// First and second moments, one per trainable tensor (Adam only).
    pub moments: Option<(Vec<Tensor>, Vec<Tensor>)>,
}

impl OptimizerState {
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerState {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: Some(DEFAULT_CLIP_NORM),
            step_count: 0,
            moments: None,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerState {
            kind: OptimizerKind::Sgd,
            clip_norm: None,
            ..OptimizerState::adam(learning_rate)
        }
    }

    pub fn with_clip(mut self, clip_norm: Option<f64>) -> Self {
        self.clip_norm = clip_norm;
        self
    }

    /// Applies one update to `params` in place. Gradients are clipped first
    /// when `clip_norm` is set. Non-finite gradients abort the update
    /// before anything is modified.
    pub fn update(&mut self, params: &mut [Tensor], grads: &mut [Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Argument(format!(
                "{} parameter tensors but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads.iter()).enumerate() {
            if !p.same_shape(g) {
                return Err(Error::Dimension {
                    op: "optimizer update",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
            if g.data().iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in tensor {i}")));
            }
        }
        if let Some(max_norm) = self.clip_norm {
            clip(grads, max_norm);
        }
        self.step_count += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads.iter()) {
                    p.add_scaled(g, -self.learning_rate)?;
                }
            }
            OptimizerKind::Adam => {
                let (m, v) = self
                    .moments
                    .get_or_insert_with(|| (zeros_like(params), zeros_like(params)));
                let t = self.step_count as i32;
                let correction1 = 1.0 - self.beta1.powi(t);
                let correction2 = 1.0 - self.beta2.powi(t);
                let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
                for (((p, g), m), v) in params.iter_mut().zip(grads.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                    let it = p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut().iter_mut())
                        .zip(v.data_mut().iter_mut());
                    for (((theta, &gi), mi), vi) in it {
                        *mi = b1 * *mi + (1.0 - b1) * gi;
                        *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                        let m_hat = *mi / correction1;
                        let v_hat = *vi / correction2;
                        *theta -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::squared_norm).sum::<f64>().sqrt()
}

/// Rescales all gradients by `max_norm / ‖g‖` when the global L2 norm
/// exceeds `max_norm`. Returns the norm before clipping.
pub fn clip(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && max_norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64) -> Vec<Tensor> {
        vec![Tensor::filled(1, 1, x)]
    }

    #[test]
    fn sgd_step() {
        let mut params = scalar(1.0);
        let mut grads = scalar(0.5);
        OptimizerState::sgd(0.1).update(&mut params, &mut grads).unwrap();
        assert!((params[0].data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        for g in [0.3, -2.0, 1e-3] {
            let mut params = scalar(0.0);
            let mut grads = scalar(g);
            let mut opt = OptimizerState::adam(0.01).with_clip(None);
            opt.update(&mut params, &mut grads).unwrap();
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((params[0].data()[0] - expected).abs() < 1e-12);
            assert_eq!(opt.step_count, 1);
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        for mut opt in [OptimizerState::sgd(0.1), OptimizerState::adam(0.1)] {
            let mut params = vec![Tensor::from_rows(&[&[1.0, -2.0], &[3.0, 0.5]])];
            let before = params.clone();
            let mut grads = vec![Tensor::zeros(2, 2)];
            opt.update(&mut params, &mut grads).unwrap();
            assert_eq!(params, before);
        }
    }

    #[test]
    fn nan_gradient_aborts_update() {
        let mut params = scalar(1.0);
        let mut grads = scalar(f64::NAN);
        let mut opt = OptimizerState::adam(0.1);
        assert!(matches!(opt.update(&mut params, &mut grads), Err(Error::Numeric(_))));
        assert_eq!(params[0].data()[0], 1.0);
        assert_eq!(opt.step_count, 0);
    }

    #[test]
    fn clipping() {
        let mut small = vec![Tensor::from_rows(&[&[0.3, 0.4]])];
        let before = small.clone();
        clip(&mut small, 1.0);
        assert_eq!(small, before);

        let mut big = vec![Tensor::from_rows(&[&[1.2, 1.6]]), Tensor::filled(1, 1, 0.0)];
        let pre = big[0].clone();
        assert!((clip(&mut big, 1.0) - 2.0).abs() < 1e-15);
        assert!((global_norm(&big) - 1.0).abs() < 1e-12);
        assert!((big[0].data()[0] - 0.6).abs() < 1e-15);
        let dot: f64 = pre.data().iter().zip(big[0].data()).map(|(a, b)| a * b).sum();
        let cosine = dot / (pre.squared_norm().sqrt() * big[0].squared_norm().sqrt());
        assert!((cosine - 1.0).abs() < 1e-12);
    }
}
