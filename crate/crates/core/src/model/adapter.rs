//! Two-layer MLP that maps a frozen encoder's output into another embedding
//! space (e.g. a language model's token embeddings).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{truncated_normal, INIT_STD};
use super::{AdapterConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Real, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct AdapterParams<T: Real = f32> {
    pub fc1_weight: Tensor<T>,
    pub fc1_bias: Tensor<T>,
    pub fc2_weight: Tensor<T>,
    pub fc2_bias: Tensor<T>,
    in_tokens: usize,
    in_dim: usize,
    cfg: AdapterConfig,
}

impl<T: Real> AdapterParams<T> {
    pub fn init(model: &ModelConfig, cfg: &AdapterConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let input = model.proj_width();
        let output = cfg.out_tokens * cfg.out_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weight = |rows: usize, cols: usize| {
            let v = truncated_normal(&mut rng, INIT_STD, rows * cols);
            Tensor::from_parts(vec![rows, cols], v.into_iter().map(T::of).collect())
        };
        let fc1_weight = weight(cfg.hidden, input);
        let fc2_weight = weight(output, cfg.hidden);
        Ok(Self {
            fc1_weight,
            fc1_bias: Tensor::zeros(&[cfg.hidden]),
            fc2_weight,
            fc2_bias: Tensor::zeros(&[output]),
            in_tokens: model.n_tokens,
            in_dim: model.token_dim,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &AdapterConfig {
        &self.cfg
    }

    pub fn tensors(&self) -> [&Tensor<T>; 4] {
        [&self.fc1_weight, &self.fc1_bias, &self.fc2_weight, &self.fc2_bias]
    }

    /// Records flatten → linear → GELU → linear → reshape on `g`.
    /// `weights` are the four bound parameter vars in [`Self::tensors`] order.
    pub fn record(&self, g: &mut Graph<T>, z: Var, weights: [Var; 4]) -> Result<Var> {
        let dims = g.value(z).dims();
        if dims != [self.in_tokens, self.in_dim] {
            return Err(Error::shape(
                "adapter_forward",
                format!("expected [{}, {}], got {dims:?}", self.in_tokens, self.in_dim),
            ));
        }
        let flat = g.reshape(z, &[1, self.in_tokens * self.in_dim])?;
        let h = g.linear(flat, weights[0], weights[1])?;
        let h = g.gelu(h)?;
        let out = g.linear(h, weights[2], weights[3])?;
        g.reshape(out, &[self.cfg.out_tokens, self.cfg.out_dim])
    }
}

/// Eager adapter mapping Z[N×d] → M×d'.
pub fn adapter_forward<T: Real>(z: &Tensor<T>, params: &AdapterParams<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let w = params.tensors().map(|t| g.constant(t.clone()));
    let out = params.record(&mut g, zv, w)?;
    Ok(g.value(out).clone())
}
