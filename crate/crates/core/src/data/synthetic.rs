//! Linear-Gaussian synthetic fMRI generator with a known ground truth.
//!
//! Each stimulus has a latent `c ~ N(0, I_k)`. Its target embedding is
//! `E = reshape(G c)` and subject `s` observes `v = A_s c + b_s + σ ε`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::corpus::{Corpus, Split, Trial};
use super::manifest::{write_dataset, RepetitionPolicy};
use super::mft::{write_mft, MftEntry};
use crate::error::{Error, Result};
use crate::model::SubjectDecl;
use crate::numerics::Tensor;

pub const ORACLE_FILE: &str = "oracle.mft";
pub const SPEC_FILE: &str = "synthetic.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub subjects: Vec<SubjectDecl>,
    pub n_tokens: usize,
    pub token_dim: usize,
    pub latent_dim: usize,
    pub noise_std: f64,
    /// Standard deviation of each subject's additive voxel offset `b_s`.
    pub subject_bias_std: f64,
    pub n_stimuli: usize,
    /// The last `n_test` stimuli form the test split.
    pub n_test: usize,
    pub repetitions: usize,
    #[serde(default = "default_policy")]
    pub repetition_policy: RepetitionPolicy,
    pub seed: u64,
}

fn default_policy() -> RepetitionPolicy {
    RepetitionPolicy::Separate
}

impl SyntheticSpec {
    /// Four subjects, 600 stimuli (100 held out), one presentation each.
    pub fn desk(seed: u64) -> Self {
        Self {
            subjects: [("subj01", 120), ("subj02", 100), ("subj03", 90), ("subj04", 80)]
                .iter()
                .map(|&(id, f)| SubjectDecl::new(id, f))
                .collect(),
            n_tokens: 4,
            token_dim: 16,
            latent_dim: 12,
            noise_std: 0.1,
            subject_bias_std: 1.0,
            n_stimuli: 600,
            n_test: 100,
            repetitions: 1,
            repetition_policy: RepetitionPolicy::Separate,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.subjects.is_empty() {
            return bad("at least one subject is required");
        }
        if self.subjects.iter().any(|s| s.voxel_count == 0 || s.id.is_empty()) {
            return bad("subjects need an id and at least one voxel");
        }
        for (i, s) in self.subjects.iter().enumerate() {
            if self.subjects[..i].iter().any(|o| o.id == s.id) {
                return bad(&format!("duplicate subject `{}`", s.id));
            }
        }
        if self.n_tokens == 0 || self.token_dim == 0 || self.latent_dim == 0 {
            return bad("n_tokens, token_dim and latent_dim must be positive");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be finite and non-negative");
        }
        if !(self.subject_bias_std >= 0.0 && self.subject_bias_std.is_finite()) {
            return bad("subject_bias_std must be finite and non-negative");
        }
        if self.n_stimuli == 0 || self.n_test > self.n_stimuli {
            return bad("need n_stimuli > 0 and n_test <= n_stimuli");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        Ok(())
    }
}

/// Ground-truth parameters behind a generated corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticOracle {
    /// `[N·d, k]`
    pub projection: Tensor<f64>,
    /// Per subject `[F_s, k]`.
    pub mixing: Vec<Tensor<f64>>,
    /// Per subject `[F_s]`.
    pub bias: Vec<Tensor<f64>>,
    /// `[n_stimuli, k]`
    pub latents: Tensor<f64>,
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub spec: SyntheticSpec,
    pub corpus: Corpus,
    pub oracle: SyntheticOracle,
}

pub fn stimulus_id(i: usize) -> String {
    format!("stim{i:05}")
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Tensor<f64> {
    let data = (0..rows * cols)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::from_parts(vec![rows, cols], data)
}

fn mat_vec(m: &Tensor<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|r| m.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let k = spec.latent_dim;
    let nd = spec.n_tokens * spec.token_dim;
    let w_std = 1.0 / (k as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let projection = normal_matrix(&mut rng, nd, k, w_std);
    let mut mixing = Vec::new();
    let mut bias = Vec::new();
    for s in &spec.subjects {
        mixing.push(normal_matrix(&mut rng, s.voxel_count, k, w_std));
        bias.push(normal_matrix(&mut rng, s.voxel_count, 1, spec.subject_bias_std).reshape(&[s.voxel_count])?);
    }
    let latents = normal_matrix(&mut rng, spec.n_stimuli, k, 1.0);

    let mut embeddings = BTreeMap::new();
    for i in 0..spec.n_stimuli {
        let e: Vec<f32> = mat_vec(&projection, latents.row(i))
            .into_iter()
            .map(|x| x as f32)
            .collect();
        embeddings.insert(stimulus_id(i), Tensor::matrix(spec.n_tokens, spec.token_dim, e)?);
    }

    let first_test = spec.n_stimuli - spec.n_test;
    let mut trials = Vec::new();
    for (si, s) in spec.subjects.iter().enumerate() {
        for i in 0..spec.n_stimuli {
            let clean: Vec<f64> = mat_vec(&mixing[si], latents.row(i))
                .iter()
                .zip(bias[si].data())
                .map(|(a, b)| a + b)
                .collect();
            let reps: Vec<Vec<f64>> = (0..spec.repetitions)
                .map(|_| {
                    clean
                        .iter()
                        .map(|&x| x + spec.noise_std * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect();
            let observed = match spec.repetition_policy {
                RepetitionPolicy::Separate => reps,
                RepetitionPolicy::Averaged => {
                    let r = reps.len() as f64;
                    vec![(0..clean.len())
                        .map(|j| reps.iter().map(|v| v[j]).sum::<f64>() / r)
                        .collect()]
                }
            };
            for v in observed {
                trials.push(Trial {
                    subject: s.id.clone(),
                    stimulus: stimulus_id(i),
                    split: if i >= first_test { Split::Test } else { Split::Train },
                    voxels: v.into_iter().map(|x| x as f32).collect(),
                });
            }
        }
    }

    Ok(SyntheticData {
        spec: spec.clone(),
        corpus: Corpus {
            n_tokens: spec.n_tokens,
            token_dim: spec.token_dim,
            subjects: spec.subjects.clone(),
            trials,
            embeddings,
        },
        oracle: SyntheticOracle {
            projection,
            mixing,
            bias,
            latents,
        },
    })
}

/// Generates a corpus and writes the manifest, payloads, oracle and spec to
/// `dir`. Returns the manifest path.
pub fn write_synthetic(spec: &SyntheticSpec, dir: &Path) -> Result<PathBuf> {
    let data = generate_synthetic(spec)?;
    let manifest = write_dataset(&data.corpus, dir, spec.repetition_policy)?;

    let o = &data.oracle;
    let mut entries = vec![
        MftEntry::new("projection", o.projection.clone()),
        MftEntry::new("latents", o.latents.clone()),
    ];
    for (s, (a, b)) in spec.subjects.iter().zip(o.mixing.iter().zip(&o.bias)) {
        entries.push(MftEntry::new(format!("mixing.{}", s.id), a.clone()));
        entries.push(MftEntry::new(format!("bias.{}", s.id), b.clone()));
    }
    write_mft(&dir.join(ORACLE_FILE), &entries)?;

    let path = dir.join(SPEC_FILE);
    let text = serde_json::to_string_pretty(spec)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
