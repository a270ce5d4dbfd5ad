//! Feature-matching objective: token-wise L1 plus within-sample token
//! contrastive loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Real, Tensor, Var};

fn default_dot_scale() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Weight on the contrastive term. Zero disables it (ablation only).
    pub alpha: f64,
    /// Multiplier on z·e inside the softmax.
    #[serde(default = "default_dot_scale")]
    pub dot_scale: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            dot_scale: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be finite and ≥ 0, got {}",
                self.alpha
            )));
        }
        if self.alpha == 0.0 {
            log::warn!("alpha = 0: contrastive term disabled");
        }
        if !(self.dot_scale > 0.0 && self.dot_scale.is_finite()) {
            return Err(Error::Config(format!(
                "dot_scale must be positive, got {}",
                self.dot_scale
            )));
        }
        Ok(())
    }
}

/// Scalar loss vars recorded on a graph.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub l1: Var,
    pub contrastive: Var,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub l1: f64,
    pub contrastive: f64,
}

fn check_pair<T: Real>(g: &Graph<T>, op: &'static str, z: Var, e: Var) -> Result<usize> {
    let (dz, de) = (g.value(z).dims(), g.value(e).dims());
    if dz.len() != 2 || dz != de {
        return Err(Error::shape(op, format!("Z {dz:?} vs E {de:?}")));
    }
    Ok(dz[0])
}

/// (1/N)·Σᵢ ‖zᵢ − eᵢ‖₁
pub fn record_l1<T: Real>(g: &mut Graph<T>, z: Var, e: Var) -> Result<Var> {
    let n = check_pair(g, "l1_loss", z, e)?;
    let diff = g.sub(z, e)?;
    let abs = g.abs(diff)?;
    let s = g.sum(abs)?;
    g.scale(s, T::one() / T::of(n as f64))
}

/// −(1/N)·Σᵢ log softmaxⱼ(zᵢ·eⱼ)[i], over the N token positions of one sample.
pub fn record_contrastive<T: Real>(g: &mut Graph<T>, z: Var, e: Var, cfg: &LossConfig) -> Result<Var> {
    let n = check_pair(g, "contrastive_loss", z, e)?;
    let sim = g.matmul_nt(z, e)?;
    let sim = if cfg.dot_scale == 1.0 {
        sim
    } else {
        g.scale(sim, T::of(cfg.dot_scale))?
    };
    let logp = g.log_softmax_rows(sim)?;
    let matched = g.diag(logp)?;
    let s = g.sum(matched)?;
    g.scale(s, -T::one() / T::of(n as f64))
}

/// L1 + α·contrastive, with both components kept for logging.
pub fn record_total<T: Real>(g: &mut Graph<T>, z: Var, e: Var, cfg: &LossConfig) -> Result<LossVars> {
    let l1 = record_l1(g, z, e)?;
    let contrastive = record_contrastive(g, z, e, cfg)?;
    let weighted = g.scale(contrastive, T::of(cfg.alpha))?;
    let total = g.add(l1, weighted)?;
    Ok(LossVars { total, l1, contrastive })
}

impl LossVars {
    pub fn values<T: Real>(&self, g: &Graph<T>) -> LossValues {
        let v = |x: Var| g.value(x).data()[0].as_f64();
        LossValues {
            total: v(self.total),
            l1: v(self.l1),
            contrastive: v(self.contrastive),
        }
    }
}

fn eager<T: Real, R>(
    z: &Tensor<T>,
    e: &Tensor<T>,
    f: impl FnOnce(&mut Graph<T>, Var, Var) -> Result<R>,
) -> Result<(Graph<T>, R)> {
    let mut g = Graph::new();
    let (zv, ev) = (g.constant(z.clone()), g.constant(e.clone()));
    let r = f(&mut g, zv, ev)?;
    Ok((g, r))
}

pub fn l1_loss<T: Real>(z: &Tensor<T>, e: &Tensor<T>) -> Result<T> {
    let (g, v) = eager(z, e, |g, z, e| record_l1(g, z, e))?;
    Ok(g.value(v).data()[0])
}

pub fn contrastive_loss<T: Real>(z: &Tensor<T>, e: &Tensor<T>, cfg: &LossConfig) -> Result<T> {
    let (g, v) = eager(z, e, |g, z, e| record_contrastive(g, z, e, cfg))?;
    Ok(g.value(v).data()[0])
}

pub fn total_loss<T: Real>(z: &Tensor<T>, e: &Tensor<T>, cfg: &LossConfig) -> Result<LossValues> {
    let (g, v) = eager(z, e, |g, z, e| record_total(g, z, e, cfg))?;
    Ok(v.values(&g))
}
