//! Subject projection, subject-token prepending and the shared pre-norm
//! transformer stack.

use super::params::{slot, ParamKind};
use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Real, Tensor, Var};

/// Lazily binds parameter tensors into a [`Graph`], at most once each.
///
/// Only the parameters actually touched by a forward pass are copied onto the
/// tape, so a batch drawn from one subject never materializes the others'
/// projection matrices.
pub struct Binder<'p, T: Real> {
    params: &'p ModelParams<T>,
    vars: Vec<Option<Var>>,
    track: bool,
    frozen_tokens: bool,
}

impl<'p, T: Real> Binder<'p, T> {
    /// `track` selects whether trainable parameters carry gradients.
    pub fn new(cfg: &ModelConfig, params: &'p ModelParams<T>, track: bool) -> Self {
        Self {
            params,
            vars: vec![None; params.tensors().len()],
            track,
            frozen_tokens: !cfg.subject_token,
        }
    }

    /// Uses `vars` (one per parameter slot, already on the graph) instead of
    /// copying tensors from `params`.
    pub fn from_vars(cfg: &ModelConfig, params: &'p ModelParams<T>, vars: &[Var]) -> Result<Self> {
        if vars.len() != params.tensors().len() {
            return Err(Error::Contract(format!(
                "{} vars for {} parameter slots",
                vars.len(),
                params.tensors().len()
            )));
        }
        Ok(Self {
            params,
            vars: vars.iter().copied().map(Some).collect(),
            track: true,
            frozen_tokens: !cfg.subject_token,
        })
    }

    pub fn params(&self) -> &'p ModelParams<T> {
        self.params
    }

    pub fn trainable(&self, slot: usize) -> bool {
        !(self.frozen_tokens && self.params.specs()[slot].kind == ParamKind::SubjectToken)
    }

    pub fn bind(&mut self, g: &mut Graph<T>, slot: usize) -> Var {
        if let Some(v) = self.vars[slot] {
            return v;
        }
        let t = self.params.tensors()[slot].clone();
        let v = if self.track && self.trainable(slot) {
            g.param(t)
        } else {
            g.constant(t)
        };
        self.vars[slot] = Some(v);
        v
    }

    /// (slot, var) for every bound parameter.
    pub fn bound(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.vars.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v)))
    }
}

fn check_voxels(cfg: &ModelConfig, subject: usize, len: usize) -> Result<()> {
    let decl = cfg
        .subjects
        .get(subject)
        .ok_or_else(|| Error::UnknownSubject(format!("#{subject}")))?;
    if len != decl.voxel_count {
        return Err(Error::shape(
            "subject_project",
            format!("subject `{}` expects {} voxels, got {len}", decl.id, decl.voxel_count),
        ));
    }
    Ok(())
}

/// x^s = reshape(W_s·v + b_s, N×d), recorded on the graph.
pub fn project<T: Real>(
    g: &mut Graph<T>,
    b: &mut Binder<'_, T>,
    cfg: &ModelConfig,
    voxels: Var,
    subject: usize,
) -> Result<Var> {
    check_voxels(cfg, subject, g.value(voxels).len())?;
    let f = cfg.subjects[subject].voxel_count;
    let row = g.reshape(voxels, &[1, f])?;
    let w = b.bind(g, b.params().subject_slot(subject, 0));
    let bias = b.bind(g, b.params().subject_slot(subject, 1));
    let flat = g.linear(row, w, bias)?;
    g.reshape(flat, &[cfg.n_tokens, cfg.token_dim])
}

/// Multi-head self-attention over all rows of `y` with output projection.
/// Returns the output and the per-head attention probability matrices.
pub fn attention<T: Real>(
    g: &mut Graph<T>,
    b: &mut Binder<'_, T>,
    cfg: &ModelConfig,
    block: usize,
    y: Var,
) -> Result<(Var, Vec<Var>)> {
    let base = b.params().block_slot(block, 0);
    let lin = |g: &mut Graph<T>, b: &mut Binder<'_, T>, w: usize, bias: usize, x: Var| {
        let (w, bias) = (b.bind(g, base + w), b.bind(g, base + bias));
        g.linear(x, w, bias)
    };
    let q = lin(g, b, slot::Q_W, slot::Q_B, y)?;
    let k = lin(g, b, slot::K_W, slot::K_B, y)?;
    let v = lin(g, b, slot::V_W, slot::V_B, y)?;

    let hd = cfg.head_dim();
    let scale = T::one() / T::of(hd as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.heads);
    let mut probs = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let (qh, kh, vh) = if cfg.heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * hd, hd)?,
                g.slice_cols(k, h * hd, hd)?,
                g.slice_cols(v, h * hd, hd)?,
            )
        };
        let scores = g.matmul_nt(qh, kh)?;
        let scores = g.scale(scores, scale)?;
        let p = g.softmax_rows(scores)?;
        probs.push(p);
        heads.push(g.matmul(p, vh)?);
    }
    let merged = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_cols(&heads)?
    };
    let out = lin(g, b, slot::O_W, slot::O_B, merged)?;
    Ok((out, probs))
}

fn mlp<T: Real>(g: &mut Graph<T>, b: &mut Binder<'_, T>, block: usize, x: Var) -> Result<Var> {
    let base = b.params().block_slot(block, 0);
    let (w1, b1) = (b.bind(g, base + slot::FC1_W), b.bind(g, base + slot::FC1_B));
    let (w2, b2) = (b.bind(g, base + slot::FC2_W), b.bind(g, base + slot::FC2_B));
    let hidden = g.linear(x, w1, b1)?;
    let act = g.gelu(hidden)?;
    g.linear(act, w2, b2)
}

/// Full encoder: Z ∈ R^{N×d} for one trial of `subject`.
pub fn encode<T: Real>(
    g: &mut Graph<T>,
    b: &mut Binder<'_, T>,
    cfg: &ModelConfig,
    voxels: Var,
    subject: usize,
) -> Result<Var> {
    let x = project(g, b, cfg, voxels, subject)?;
    let token = b.bind(g, b.params().subject_slot(subject, 2));
    let token = g.reshape(token, &[1, cfg.token_dim])?;
    let tokens = g.concat_rows(&[token, x])?;
    let pos = b.bind(g, b.params().pos_slot());
    let mut y = g.add(tokens, pos)?;

    let eps = T::of(cfg.ln_eps);
    for l in 0..cfg.depth {
        let base = b.params().block_slot(l, 0);
        let (g1, b1) = (b.bind(g, base + slot::LN1_G), b.bind(g, base + slot::LN1_B));
        let h = g.layer_norm(y, g1, b1, eps)?;
        let (attn, _) = attention(g, b, cfg, l, h)?;
        y = g.add(y, attn)?;

        let (g2, b2) = (b.bind(g, base + slot::LN2_G), b.bind(g, base + slot::LN2_B));
        let h = g.layer_norm(y, g2, b2, eps)?;
        let m = mlp(g, b, l, h)?;
        y = g.add(y, m)?;
    }
    let fin = b.params().final_ln_slot();
    let (gf, bf) = (b.bind(g, fin), b.bind(g, fin + 1));
    let y = g.layer_norm(y, gf, bf, eps)?;
    // Drop the subject-token row.
    g.slice_rows(y, 1, cfg.n_tokens)
}

fn subject_of(cfg: &ModelConfig, subject_id: &str) -> Result<usize> {
    cfg.subject_index(subject_id)
}

/// Eager per-subject linear projection.
pub fn subject_project<T: Real>(
    voxels: &[T],
    subject_id: &str,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
) -> Result<Tensor<T>> {
    let s = subject_of(cfg, subject_id)?;
    check_voxels(cfg, s, voxels.len())?;
    let mut g = Graph::new();
    let mut b = Binder::new(cfg, params, false);
    let v = g.constant(Tensor::vector(voxels.to_vec())?);
    let x = project(&mut g, &mut b, cfg, v, s)?;
    Ok(g.value(x).clone())
}

/// Eager encoder forward pass, Z ∈ R^{N×d}.
pub fn forward<T: Real>(
    voxels: &[T],
    subject_id: &str,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
) -> Result<Tensor<T>> {
    let s = subject_of(cfg, subject_id)?;
    forward_index(voxels, s, params, cfg)
}

pub fn forward_index<T: Real>(
    voxels: &[T],
    subject: usize,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
) -> Result<Tensor<T>> {
    check_voxels(cfg, subject, voxels.len())?;
    let mut g = Graph::new();
    let mut b = Binder::new(cfg, params, false);
    let v = g.constant(Tensor::vector(voxels.to_vec())?);
    let z = encode(&mut g, &mut b, cfg, v, subject)?;
    Ok(g.value(z).clone())
}

/// Runs one attention sublayer of `block` on `y` ((N+1)×d).
/// Returns the output and each head's attention probabilities.
pub fn attention_block<T: Real>(
    y: &Tensor<T>,
    block: usize,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
    if !cfg.token_dim.is_multiple_of(cfg.heads) {
        return Err(Error::Config("token_dim must be divisible by heads".into()));
    }
    if y.rank() != 2 || y.cols() != cfg.token_dim {
        return Err(Error::shape("attention_block", format!("input dims {:?}", y.dims())));
    }
    let mut g = Graph::new();
    let mut b = Binder::new(cfg, params, false);
    let v = g.constant(y.clone());
    let (out, probs) = attention(&mut g, &mut b, cfg, block, v)?;
    Ok((
        g.value(out).clone(),
        probs.into_iter().map(|p| g.value(p).clone()).collect(),
    ))
}
