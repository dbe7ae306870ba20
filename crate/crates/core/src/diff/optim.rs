use serde::{Deserialize, Serialize};

use super::{DiffError, Tensor};

/// Hyperparameters for the decoupled-weight-decay adaptive-moment rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
            clip_norm: None,
        }
    }
}

/// Moment buffers and step counter for a fixed, ordered parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &[&Tensor]) -> Self {
        Self {
            config,
            step: 0,
            first_moment: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    /// One update over `params` (same order as at construction).
    ///
    /// Every parameter with `requires_grad` must carry a gradient; gradients
    /// are cleared afterwards.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<(), DiffError> {
        if params.len() != self.first_moment.len() {
            return Err(DiffError::OptimizerLayout {
                expected: self.first_moment.len(),
                got: params.len(),
            });
        }
        for (i, p) in params.iter().enumerate() {
            if p.numel() != self.first_moment[i].len() {
                return Err(DiffError::OptimizerLayout {
                    expected: self.first_moment[i].len(),
                    got: p.numel(),
                });
            }
            if p.requires_grad && p.grad.is_none() {
                return Err(DiffError::MissingGradient { index: i });
            }
        }
        let clip_scale = match self.config.clip_norm {
            Some(max_norm) => {
                let norm = params
                    .iter()
                    .filter_map(|p| p.grad.as_ref())
                    .flatten()
                    .map(|g| g * g)
                    .sum::<f64>()
                    .sqrt();
                if norm > max_norm {
                    max_norm / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };

        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.config;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            if !p.requires_grad {
                continue;
            }
            let grad = p.grad.take().expect("checked above");
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let g = grad[j] * clip_scale;
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                *w -= lr * weight_decay * *w;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
