//! ADAM optimizer and reduce-on-plateau learning-rate schedule.

use crate::nn::tensor::Scalar;
use crate::nn::Network;

/// ADAM with bias correction. Moment state is kept flat in checkpoint
/// parameter order.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(total_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![T::zero(); total_params],
            v: vec![T::zero(); total_params],
        }
    }

    /// Apply one update from the gradients currently accumulated in the
    /// network. Zero gradient leaves parameters unchanged (no weight decay).
    pub fn step(&mut self, net: &mut Network<T>) {
        self.step += 1;
        let b1 = T::of_f64(self.beta1);
        let b2 = T::of_f64(self.beta2);
        let one = T::one();
        let lr = T::of_f64(self.lr);
        let eps = T::of_f64(self.eps);
        let bc1 = T::of_f64(1.0 - self.beta1.powi(self.step as i32));
        let bc2 = T::of_f64(1.0 - self.beta2.powi(self.step as i32));
        let mut offset = 0usize;
        let (m, v) = (&mut self.m, &mut self.v);
        net.visit_params_mut(|vals, grads| {
            for j in 0..vals.len() {
                let g = grads[j];
                let mj = b1 * m[offset + j] + (one - b1) * g;
                let vj = b2 * v[offset + j] + (one - b2) * g * g;
                m[offset + j] = mj;
                v[offset + j] = vj;
                let m_hat = mj / bc1;
                let v_hat = vj / bc2;
                vals[j] = vals[j] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            offset += vals.len();
        });
    }
}

/// Multiplies the learning rate by `factor` when the best epoch loss has
/// not improved by at least `rel_improvement` (relative) for `patience`
/// consecutive epochs.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    pub rel_improvement: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(patience: usize, factor: f64) -> Self {
        PlateauScheduler {
            patience,
            factor,
            rel_improvement: 1e-4,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Observe one epoch loss; returns the multiplier to apply to the
    /// learning rate (1.0 almost always, `factor` when the plateau fires).
    pub fn observe(&mut self, epoch_loss: f64) -> f64 {
        if epoch_loss < self.best * (1.0 - self.rel_improvement) {
            self.best = epoch_loss;
            self.bad_epochs = 0;
            1.0
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.bad_epochs = 0;
                self.factor
            } else {
                1.0
            }
        }
    }
}
