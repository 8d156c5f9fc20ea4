//! Adam optimizer with bias correction.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::scalar::Scalar;
use crate::autodiff::Tensor;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moment estimates plus the shared step count.
pub struct Adam<F> {
    cfg: AdamConfig,
    step: u64,
    moments: Vec<(Tensor<F>, Tensor<F>)>,
}

/// Raised when a gradient contains NaN; carries the parameter name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NanGradError {
    pub param: String,
}

impl core::fmt::Display for NanGradError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "NaN gradient for parameter '{}'", self.param)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for NanGradError {}

impl<F: Scalar> Adam<F> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// One Adam update over parameters paired with gradients. Parameters
    /// must be presented in a stable order; slots are allocated on first
    /// use. A missing gradient (parameter not reached by the loss) leaves
    /// the parameter untouched but still advances its slot.
    pub fn step<'a>(
        &mut self,
        params: impl Iterator<Item = (&'a str, &'a mut Tensor<F>, Option<&'a Tensor<F>>)>,
    ) -> Result<(), NanGradError> {
        self.step += 1;
        let b1 = F::of(self.cfg.beta1);
        let b2 = F::of(self.cfg.beta2);
        let eps = F::of(self.cfg.eps);
        let bc1 = F::of(1.0 - self.cfg.beta1.powi(self.step as i32));
        let bc2 = F::of(1.0 - self.cfg.beta2.powi(self.step as i32));
        let lr = F::of(self.cfg.lr);
        for (slot, (name, param, grad)) in params.enumerate() {
            if self.moments.len() <= slot {
                self.moments
                    .push((Tensor::zeros(param.shape()), Tensor::zeros(param.shape())));
            }
            let Some(grad) = grad else { continue };
            if grad.has_nan() {
                return Err(NanGradError {
                    param: name.to_string(),
                });
            }
            let (m, v) = &mut self.moments[slot];
            for ((p, &g), (mv, vv)) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()))
            {
                *mv = b1 * *mv + (F::one() - b1) * g;
                *vv = b2 * *vv + (F::one() - b2) * g * g;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
