use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::Result;
use crate::model::{encode, Binder, ModelConfig, ModelParams, SubjectDecl};
use crate::numerics::{finite_diff_check_with, GradCheckReport, Graph, Tensor, Var};
use crate::objective::{record_total, LossConfig};

pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub h: f64,
    pub seed: u64,
    pub loss: LossConfig,
    /// Flips the sign of the largest analytic gradient coordinate so the
    /// check must fail.
    pub sabotage: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-6,
            seed: 0,
            loss: LossConfig::default(),
            sabotage: false,
        }
    }
}

/// Two subjects (12 and 10 voxels), N=2, d=8, L=2, H=2.
pub fn grad_check_config(seed: u64) -> ModelConfig {
    ModelConfig {
        n_tokens: 2,
        token_dim: 8,
        depth: 2,
        heads: 2,
        ..ModelConfig::desk(vec![SubjectDecl::new("s1", 12), SubjectDecl::new("s2", 10)], seed)
    }
}

/// End-to-end check of the batch-mean total loss against central differences
/// in 64-bit, over every parameter of [`grad_check_config`].
///
/// Parameters are jittered away from their init so that LayerNorm gains,
/// biases and tokens are generic rather than 1s and 0s.
pub fn check_model_gradients(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let cfg = grad_check_config(opts.seed);
    let mut params = ModelParams::<f64>::init(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9);
    let jitter = Normal::new(0.0, 0.3).expect("valid std");
    for t in params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|x| *x += jitter.sample(&mut rng));
    }

    let mut batch = Vec::new();
    for (s, decl) in cfg.subjects.iter().enumerate() {
        let v: Vec<f64> = (0..decl.voxel_count).map(|_| StandardNormal.sample(&mut rng)).collect();
        let e: Vec<f64> = (0..cfg.n_tokens * cfg.token_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        batch.push((s, Tensor::vector(v)?, Tensor::matrix(cfg.n_tokens, cfg.token_dim, e)?));
    }

    let shapes = params.clone();
    let loss = |g: &mut Graph<f64>, vars: &[Var]| -> Result<Var> {
        let mut binder = Binder::from_vars(&cfg, &shapes, vars)?;
        let mut acc: Option<Var> = None;
        for (s, v, e) in &batch {
            let v = g.constant(v.clone());
            let e = g.constant(e.clone());
            let z = encode(g, &mut binder, &cfg, v, *s)?;
            let t = record_total(g, z, e, &opts.loss)?.total;
            acc = Some(match acc {
                Some(a) => g.add(a, t)?,
                None => t,
            });
        }
        g.scale(acc.expect("non-empty batch"), 1.0 / batch.len() as f64)
    };
    finite_diff_check_with(loss, params.tensors(), opts.h, |grads| {
        if opts.sabotage {
            if let Some((p, k)) = largest(grads) {
                grads[p][k] = -grads[p][k];
            }
        }
    })
}

fn largest(grads: &[Vec<f64>]) -> Option<(usize, usize)> {
    let mut best: Option<((usize, usize), f64)> = None;
    for (p, g) in grads.iter().enumerate() {
        for (k, x) in g.iter().enumerate() {
            if best.is_none_or(|(_, b)| x.abs() > b) {
                best = Some(((p, k), x.abs()));
            }
        }
    }
    best.filter(|&(_, b)| b > 0.0).map(|(at, _)| at)
}
