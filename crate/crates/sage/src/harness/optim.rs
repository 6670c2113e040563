//! Adam with bias correction and global gradient-norm clipping.

use crate::error::{Result, SageError};
use crate::model::SageParams;

/// Global norm ceiling applied to every gradient before the update step.
pub const GRAD_CLIP_NORM: f64 = 1.0;

/// Adam optimizer state over one parameter set. Moment buffers are laid
/// out in canonical parameter order.
#[derive(Debug, Clone)]
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        params: &SageParams,
    ) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(SageError::Config(format!("learning rate must be positive, got {learning_rate}")));
        }
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(SageError::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(SageError::Config(format!("eps must be positive, got {eps}")));
        }
        let buffers: Vec<Vec<f64>> =
            params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Ok(Adam {
            learning_rate,
            beta1,
            beta2,
            eps,
            step: 0,
            m: buffers.clone(),
            v: buffers,
        })
    }

    /// One update in place. `grads` must hold one slice per parameter in
    /// canonical order, sized to match.
    pub fn step(&mut self, params: &mut SageParams, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(SageError::Contract(format!(
                "got {} gradient slices for {} parameters",
                grads.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (p, grad) in grads.iter().enumerate() {
            if grad.len() != self.m[p].len() {
                return Err(SageError::Contract(format!(
                    "gradient {p} has {} values, parameter has {}",
                    grad.len(),
                    self.m[p].len()
                )));
            }
            let values = params.tensor_at_mut(p).data_mut();
            for (j, &g) in grad.iter().enumerate() {
                let m = &mut self.m[p][j];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                let v = &mut self.v[p][j];
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                values[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

/// Scales `grads` so their global L2 norm does not exceed `max_norm`;
/// returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let sq: f64 = grads.iter().flat_map(|g| g.iter()).map(|&v| v * v).sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}
