use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectDecl {
    pub id: String,
    pub voxel_count: usize,
}

impl SubjectDecl {
    pub fn new(id: impl Into<String>, voxel_count: usize) -> Self {
        Self {
            id: id.into(),
            voxel_count,
        }
    }
}

fn default_true() -> bool {
    true
}

/// Encoder hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of output tokens N.
    pub n_tokens: usize,
    /// Token width d.
    pub token_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    /// Filled from the dataset when omitted from a run config.
    #[serde(default)]
    pub subjects: Vec<SubjectDecl>,
    pub ln_eps: f64,
    pub seed: u64,
    /// When false the subject-token slot is kept but frozen at zero.
    #[serde(default = "default_true")]
    pub subject_token: bool,
}

impl ModelConfig {
    /// CPU-scale preset: N=4, d=16, two blocks of two heads.
    pub fn desk(subjects: Vec<SubjectDecl>, seed: u64) -> Self {
        Self {
            n_tokens: 4,
            token_dim: 16,
            depth: 2,
            heads: 2,
            mlp_ratio: 4.0,
            subjects,
            ln_eps: 1e-5,
            seed,
            subject_token: true,
        }
    }

    /// Full-width preset (16×768 tokens, 12 blocks of 8 heads).
    pub fn full(subjects: Vec<SubjectDecl>, seed: u64) -> Self {
        Self {
            n_tokens: 16,
            token_dim: 768,
            depth: 12,
            heads: 8,
            ..Self::desk(subjects, seed)
        }
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.mlp_ratio * self.token_dim as f64).round() as usize
    }

    pub fn head_dim(&self) -> usize {
        self.token_dim / self.heads
    }

    /// Flattened projection width N·d.
    pub fn proj_width(&self) -> usize {
        self.n_tokens * self.token_dim
    }

    pub fn subject_index(&self, id: &str) -> Result<usize> {
        self.subjects
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| Error::UnknownSubject(id.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_tokens == 0 || self.token_dim == 0 || self.depth == 0 || self.heads == 0 {
            return bad("n_tokens, token_dim, depth and heads must all be positive".into());
        }
        if !self.token_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "token_dim {} is not divisible by heads {}",
                self.token_dim, self.heads
            ));
        }
        if !(self.mlp_ratio > 0.0 && self.mlp_ratio.is_finite()) || self.mlp_hidden() == 0 {
            return bad(format!("mlp_ratio {} gives an empty MLP", self.mlp_ratio));
        }
        if !(self.ln_eps > 0.0) {
            return bad(format!("ln_eps must be positive, got {}", self.ln_eps));
        }
        if self.subjects.is_empty() {
            return bad("at least one subject is required".into());
        }
        for (i, s) in self.subjects.iter().enumerate() {
            if s.voxel_count == 0 {
                return bad(format!("subject `{}` has zero voxels", s.id));
            }
            if s.id.is_empty() {
                return bad("subject ids must be non-empty".into());
            }
            if self.subjects[..i].iter().any(|o| o.id == s.id) {
                return bad(format!("duplicate subject id `{}`", s.id));
            }
        }
        Ok(())
    }
}

/// Two-layer MLP mapping an N×d encoding to M×d' (text-embedding adapter).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterConfig {
    pub out_tokens: usize,
    pub out_dim: usize,
    pub hidden: usize,
}

impl AdapterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.out_tokens == 0 || self.out_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("adapter dimensions must be positive".into()));
        }
        Ok(())
    }
}
