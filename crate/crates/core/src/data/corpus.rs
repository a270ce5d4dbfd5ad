use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, SubjectDecl};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Usage(format!("unknown split `{other}` (expected train|test)"))),
        }
    }
}

/// One fMRI presentation.
#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub subject: String,
    pub stimulus: String,
    pub split: Split,
    pub voxels: Vec<f32>,
}

/// Fully materialized dataset: trials plus per-stimulus target embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub n_tokens: usize,
    pub token_dim: usize,
    pub subjects: Vec<SubjectDecl>,
    pub trials: Vec<Trial>,
    pub embeddings: BTreeMap<String, Tensor<f32>>,
}

/// A trial resolved against a model config, ready for forward passes.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub trial: usize,
    /// Index into the model config's subject list.
    pub subject: usize,
    pub voxels: &'a [f32],
    pub stimulus: &'a str,
    pub target: &'a Tensor<f32>,
}

impl Corpus {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.trials.len())
            .filter(|&i| self.trials[i].split == split)
            .collect()
    }

    pub fn subject_indices(&self, subject: &str, split: Split) -> Vec<usize> {
        (0..self.trials.len())
            .filter(|&i| self.trials[i].split == split && self.trials[i].subject == subject)
            .collect()
    }

    /// Resolves `indices` against `cfg`, failing with the offending trial index.
    pub fn samples(&self, cfg: &ModelConfig, indices: &[usize]) -> Result<Vec<Sample<'_>>> {
        indices
            .iter()
            .map(|&i| {
                let t = self
                    .trials
                    .get(i)
                    .ok_or_else(|| Error::Data(format!("trial {i} out of range")))?;
                let subject = cfg
                    .subject_index(&t.subject)
                    .map_err(|_| Error::Data(format!("trial {i}: subject `{}` is not in the model", t.subject)))?;
                let expected = cfg.subjects[subject].voxel_count;
                if t.voxels.len() != expected {
                    return Err(Error::Data(format!(
                        "trial {i}: subject `{}` expects {expected} voxels, got {}",
                        t.subject,
                        t.voxels.len()
                    )));
                }
                let target = self
                    .embeddings
                    .get(&t.stimulus)
                    .ok_or_else(|| Error::Data(format!("trial {i}: no embedding for stimulus `{}`", t.stimulus)))?;
                if target.dims() != [cfg.n_tokens, cfg.token_dim] {
                    return Err(Error::Data(format!(
                        "trial {i}: embedding for `{}` has dims {:?}, model needs [{}, {}]",
                        t.stimulus,
                        target.dims(),
                        cfg.n_tokens,
                        cfg.token_dim
                    )));
                }
                Ok(Sample {
                    trial: i,
                    subject,
                    voxels: &t.voxels,
                    stimulus: &t.stimulus,
                    target,
                })
            })
            .collect()
    }

    /// Keeps `per_subject` seeded-uniform training trials per subject and all
    /// test trials, preserving order.
    pub fn subset(&self, per_subject: usize, seed: u64) -> Result<Corpus> {
        let keys: Vec<(&str, Split)> = self.trials.iter().map(|t| (t.subject.as_str(), t.split)).collect();
        let subjects: Vec<&str> = self.subjects.iter().map(|s| s.id.as_str()).collect();
        let keep = subset_indices(&subjects, &keys, per_subject, seed)?;
        Ok(Corpus {
            trials: keep.into_iter().map(|i| self.trials[i].clone()).collect(),
            ..self.clone_header()
        })
    }

    /// Restricts the corpus to one subject.
    pub fn only_subject(&self, subject: &str) -> Result<Corpus> {
        let decl = self
            .subjects
            .iter()
            .find(|s| s.id == subject)
            .ok_or_else(|| Error::UnknownSubject(subject.to_string()))?;
        Ok(Corpus {
            subjects: vec![decl.clone()],
            trials: self.trials.iter().filter(|t| t.subject == subject).cloned().collect(),
            ..self.clone_header()
        })
    }

    fn clone_header(&self) -> Corpus {
        Corpus {
            n_tokens: self.n_tokens,
            token_dim: self.token_dim,
            subjects: self.subjects.clone(),
            trials: Vec::new(),
            embeddings: self.embeddings.clone(),
        }
    }
}

/// Seeded per-subject subsample of training trials. Test trials are always
/// kept. Returned indices are ascending.
pub fn subset_indices(
    subjects: &[&str],
    trials: &[(&str, Split)],
    per_subject: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: Vec<usize> = (0..trials.len()).filter(|&i| trials[i].1 == Split::Test).collect();
    for &s in subjects {
        let pool: Vec<usize> = (0..trials.len()).filter(|&i| trials[i] == (s, Split::Train)).collect();
        if per_subject > pool.len() {
            return Err(Error::Data(format!(
                "subject `{s}` has {} training trials, cannot keep {per_subject}",
                pool.len()
            )));
        }
        keep.extend(sample(&mut rng, pool.len(), per_subject).into_iter().map(|j| pool[j]));
    }
    keep.sort_unstable();
    Ok(keep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys() -> Vec<(&'static str, Split)> {
        let mut v = Vec::new();
        for s in ["a", "b"] {
            for i in 0..2000 {
                v.push((s, if i % 10 == 0 { Split::Test } else { Split::Train }));
            }
        }
        v
    }

    #[test]
    fn full_count_is_identity() {
        let k = keys();
        let total = k.iter().filter(|x| *x == &("a", Split::Train)).count();
        let idx = subset_indices(&["a", "b"], &k, total, 3).unwrap();
        assert_eq!(idx, (0..k.len()).collect::<Vec<_>>());
    }

    #[test]
    fn exact_cardinality_and_determinism() {
        let k = keys();
        let idx = subset_indices(&["a", "b"], &k, 500, 9).unwrap();
        for s in ["a", "b"] {
            assert_eq!(idx.iter().filter(|&&i| k[i] == (s, Split::Train)).count(), 500);
            assert_eq!(idx.iter().filter(|&&i| k[i] == (s, Split::Test)).count(), 200);
        }
        assert_eq!(idx, subset_indices(&["a", "b"], &k, 500, 9).unwrap());
        assert_ne!(idx, subset_indices(&["a", "b"], &k, 500, 10).unwrap());
    }

    #[test]
    fn too_many_is_an_error() {
        let k = keys();
        assert!(matches!(subset_indices(&["a", "b"], &k, 1801, 0), Err(Error::Data(_))));
    }

    #[test]
    fn split_parsing() {
        assert_eq!("train".parse::<Split>().unwrap(), Split::Train);
        assert!(matches!("val".parse::<Split>(), Err(Error::Usage(_))));
    }
}
