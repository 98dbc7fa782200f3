//! AdamW with decoupled weight decay and the cosine learning-rate schedule.

use uhddip_tensor::{Scalar, Tensor};

use crate::config::TrainConfig;
use crate::error::{CoreError, Result};
use crate::params::ParamStore;

pub const ADAM_EPS: f64 = 1e-8;

/// Cosine annealing from `lr_init` at iteration 0 to `lr_final` at `iters`.
///
/// Written as a convex combination so both endpoints are exact.
pub fn lr_at(iter: usize, cfg: &TrainConfig) -> f64 {
    if cfg.iters == 0 {
        return cfg.lr_init;
    }
    let t = iter.min(cfg.iters) as f64 / cfg.iters as f64;
    let c = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
    cfg.lr_init * c + cfg.lr_final * (1.0 - c)
}

#[derive(Debug, Clone)]
pub struct AdamW<T: Scalar> {
    beta1: f64,
    beta2: f64,
    weight_decay: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(store: &ParamStore<T>, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        let zeros = |t: &Tensor<T>| Tensor::zeros(t.shape().to_vec());
        Self {
            beta1,
            beta2,
            weight_decay,
            step: 0,
            m: store.values().iter().map(zeros).collect(),
            v: store.values().iter().map(zeros).collect(),
        }
    }

    pub fn from_config(store: &ParamStore<T>, cfg: &TrainConfig) -> Self {
        Self::new(store, cfg.beta1, cfg.beta2, cfg.weight_decay)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update with `grads` aligned to the store's parameter order.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if grads.len() != store.len() {
            return Err(CoreError::Dimension(format!("{} gradients for {} parameters", grads.len(), store.len())));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one, eps) = (T::one(), T::lit(ADAM_EPS));
        let (lr_t, decay) = (T::lit(lr), T::lit(lr * self.weight_decay));
        let (inv_bc1, inv_bc2) = (T::lit(1.0 / bc1), T::lit(1.0 / bc2));
        for (((p, g), m), v) in store.values_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if g.shape() != p.shape() {
                return Err(CoreError::Dimension(format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
            }
            let pd = p.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                let gi = g.data()[i];
                md[i] = b1 * md[i] + (one - b1) * gi;
                vd[i] = b2 * vd[i] + (one - b2) * gi * gi;
                let update = (md[i] * inv_bc1) / ((vd[i] * inv_bc2).sqrt() + eps);
                pd[i] = pd[i] - decay * pd[i] - lr_t * update;
            }
        }
        Ok(())
    }
}
