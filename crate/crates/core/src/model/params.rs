use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

pub(crate) const INIT_STD: f64 = 0.02;

/// Role of a parameter tensor; drives initialization and weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    NormGain,
    NormShift,
    SubjectToken,
    Position,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Weight)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub kind: ParamKind,
}

pub(crate) const PER_SUBJECT: usize = 3;
pub(crate) const PER_BLOCK: usize = 16;

/// Slot offsets of one encoder block's tensors, relative to the block base.
pub(crate) mod slot {
    pub const LN1_G: usize = 0;
    pub const LN1_B: usize = 1;
    pub const Q_W: usize = 2;
    pub const Q_B: usize = 3;
    pub const K_W: usize = 4;
    pub const K_B: usize = 5;
    pub const V_W: usize = 6;
    pub const V_B: usize = 7;
    pub const O_W: usize = 8;
    pub const O_B: usize = 9;
    pub const LN2_G: usize = 10;
    pub const LN2_B: usize = 11;
    pub const FC1_W: usize = 12;
    pub const FC1_B: usize = 13;
    pub const FC2_W: usize = 14;
    pub const FC2_B: usize = 15;
}

/// Ordered list of every learnable tensor for `cfg`.
///
/// Order: per subject (projection weight, projection bias, token), position
/// embeddings, then each block, then the final norm.
pub fn layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let (n, d, h, nd) = (cfg.n_tokens, cfg.token_dim, cfg.mlp_hidden(), cfg.proj_width());
    let mut out = Vec::new();
    let mut push = |name: String, dims: Vec<usize>, kind| out.push(ParamSpec { name, dims, kind });
    for s in &cfg.subjects {
        push(
            format!("subject.{}.proj.weight", s.id),
            vec![nd, s.voxel_count],
            ParamKind::Weight,
        );
        push(format!("subject.{}.proj.bias", s.id), vec![nd], ParamKind::Bias);
        push(format!("subject.{}.token", s.id), vec![d], ParamKind::SubjectToken);
    }
    push("pos_embed".into(), vec![n + 1, d], ParamKind::Position);
    for l in 0..cfg.depth {
        let p = |s: &str| format!("blocks.{l}.{s}");
        push(p("ln1.gamma"), vec![d], ParamKind::NormGain);
        push(p("ln1.beta"), vec![d], ParamKind::NormShift);
        for proj in ["q", "k", "v", "o"] {
            push(p(&format!("attn.{proj}.weight")), vec![d, d], ParamKind::Weight);
            push(p(&format!("attn.{proj}.bias")), vec![d], ParamKind::Bias);
        }
        push(p("ln2.gamma"), vec![d], ParamKind::NormGain);
        push(p("ln2.beta"), vec![d], ParamKind::NormShift);
        push(p("mlp.fc1.weight"), vec![h, d], ParamKind::Weight);
        push(p("mlp.fc1.bias"), vec![h], ParamKind::Bias);
        push(p("mlp.fc2.weight"), vec![d, h], ParamKind::Weight);
        push(p("mlp.fc2.bias"), vec![d], ParamKind::Bias);
    }
    push("final_ln.gamma".into(), vec![d], ParamKind::NormGain);
    push("final_ln.beta".into(), vec![d], ParamKind::NormShift);
    out
}

/// Samples a normal truncated to |x| ≤ 2·std whose post-truncation standard
/// deviation equals `std`.
pub(crate) fn truncated_normal(rng: &mut ChaCha8Rng, std: f64, n: usize) -> Vec<f64> {
    let bound = 2.0 * std;
    let normal = Normal::new(0.0, bound / truncation_ratio()).expect("positive std");
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x: f64 = normal.sample(rng);
        if x.abs() <= bound {
            out.push(x);
        }
    }
    out
}

/// Solves for a = bound/σ such that N(0, σ²) truncated to ±bound has std bound/2.
fn truncation_ratio() -> f64 {
    let pdf = |a: f64| (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mass = |a: f64| libm::erf(a / std::f64::consts::SQRT_2);
    // Variance of the truncated standard normal, in units of bound².
    let rel_var = |a: f64| (1.0 - 2.0 * a * pdf(a) / mass(a)) / (a * a);
    let (mut lo, mut hi) = (0.5, 3.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if rel_var(mid) > 0.25 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// All learnable tensors of the encoder, stored flat in [`layout`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Real = f32> {
    specs: Vec<ParamSpec>,
    tensors: Vec<Tensor<T>>,
    n_subjects: usize,
}

impl<T: Real> ModelParams<T> {
    /// Deterministic initialization from `cfg.seed`.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let specs = layout(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let tensors = specs
            .iter()
            .map(|spec| {
                let n: usize = spec.dims.iter().product();
                let values: Vec<T> = match spec.kind {
                    ParamKind::Weight | ParamKind::Position => {
                        truncated_normal(&mut rng, INIT_STD, n).into_iter().map(T::of).collect()
                    }
                    ParamKind::SubjectToken => {
                        // Sample even when frozen so both ablation arms share every other value.
                        let v = truncated_normal(&mut rng, INIT_STD, n);
                        if cfg.subject_token {
                            v.into_iter().map(T::of).collect()
                        } else {
                            vec![T::zero(); n]
                        }
                    }
                    ParamKind::Bias | ParamKind::NormShift => vec![T::zero(); n],
                    ParamKind::NormGain => vec![T::one(); n],
                };
                Tensor::from_parts(spec.dims.clone(), values)
            })
            .collect();
        Ok(Self {
            specs,
            tensors,
            n_subjects: cfg.subjects.len(),
        })
    }

    /// Builds params from named tensors (e.g. a checkpoint), checking every
    /// name and shape against the layout for `cfg`.
    pub fn from_named(cfg: &ModelConfig, mut named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        cfg.validate()?;
        let specs = layout(cfg);
        let mut tensors = Vec::with_capacity(specs.len());
        for spec in &specs {
            let pos = named
                .iter()
                .position(|(n, _)| *n == spec.name)
                .ok_or_else(|| Error::Data(format!("missing parameter `{}`", spec.name)))?;
            let (_, t) = named.swap_remove(pos);
            if t.dims() != spec.dims.as_slice() {
                return Err(Error::shape(
                    "from_named",
                    format!("`{}` has dims {:?}, expected {:?}", spec.name, t.dims(), spec.dims),
                ));
            }
            tensors.push(t);
        }
        if let Some((extra, _)) = named.first() {
            return Err(Error::Data(format!("unexpected parameter `{extra}`")));
        }
        Ok(Self {
            specs,
            tensors,
            n_subjects: cfg.subjects.len(),
        })
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.specs.iter().map(|s| s.name.as_str()).zip(&self.tensors)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.specs.iter().position(|s| s.name == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.specs
            .iter()
            .position(|s| s.name == name)
            .map(move |i| &mut self.tensors[i])
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    /// Total number of scalar parameters held.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            specs: self.specs.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            n_subjects: self.n_subjects,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub(crate) fn subject_slot(&self, subject: usize, offset: usize) -> usize {
        subject * PER_SUBJECT + offset
    }

    pub(crate) fn pos_slot(&self) -> usize {
        self.n_subjects * PER_SUBJECT
    }

    pub(crate) fn block_slot(&self, block: usize, offset: usize) -> usize {
        self.pos_slot() + 1 + block * PER_BLOCK + offset
    }

    pub(crate) fn final_ln_slot(&self) -> usize {
        self.tensors.len() - 2
    }
}
