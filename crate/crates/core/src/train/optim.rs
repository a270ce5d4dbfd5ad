use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// AdamW hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// How the optimizer treats one parameter tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamRole {
    pub trainable: bool,
    pub decay: bool,
}

/// Moment estimates and step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T: Real = f32> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }

    /// One decoupled-weight-decay Adam update.
    ///
    /// Frozen parameters are left untouched along with their moments.
    pub fn update(
        &mut self,
        params: &mut [Tensor<T>],
        grads: &[Vec<T>],
        roles: &[ParamRole],
        hp: &AdamWConfig,
    ) -> Result<()> {
        if grads.len() != params.len() || roles.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer got {} params, {} grads, {} roles for {} states",
                params.len(),
                grads.len(),
                roles.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if !roles[i].trainable {
                continue;
            }
            if g.len() != p.len() || self.m[i].len() != p.len() {
                return Err(Error::Contract(format!(
                    "parameter {i}: grad has {} values, tensor {}",
                    g.len(),
                    p.len()
                )));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { op: "adamw gradient" });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - hp.beta1.powi(t);
        let bc2 = 1.0 - hp.beta2.powi(t);
        let (b1, b2) = (T::of(hp.beta1), T::of(hp.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - hp.beta1), T::of(1.0 - hp.beta2));
        let lr = T::of(hp.lr);
        let eps = T::of(hp.eps);
        let (bc1, bc2_sqrt) = (T::of(bc1), T::of(bc2.sqrt()));

        for (i, p) in params.iter_mut().enumerate() {
            let role = roles[i];
            if !role.trainable {
                continue;
            }
            let shrink = T::of(1.0 - hp.lr * if role.decay { hp.weight_decay } else { 0.0 });
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, x) in p.data_mut().iter_mut().enumerate() {
                let g = grads[i][j];
                m[j] = b1 * m[j] + one_b1 * g;
                v[j] = b2 * v[j] + one_b2 * g * g;
                let m_hat = m[j] / bc1;
                let denom = v[j].sqrt() / bc2_sqrt + eps;
                *x = *x * shrink - lr * m_hat / denom;
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut [Vec<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .map(|g| g.as_f64() * g.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        grads.iter_mut().flatten().for_each(|g| *g = *g * s);
    }
    norm
}
