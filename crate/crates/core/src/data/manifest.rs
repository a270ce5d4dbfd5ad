//! JSON dataset manifests referencing MFT1 voxel and embedding files.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::corpus::{subset_indices, Corpus, Split, Trial};
use super::mft::{read_mft_entry, read_mft_index, write_mft, MftEntry, MftIndexEntry, MftValue};
use crate::error::{Error, Result};
use crate::model::SubjectDecl;
use crate::numerics::Tensor;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Repeated presentations are stored as separate trials or pre-averaged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepetitionPolicy {
    Separate,
    Averaged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRef {
    pub stimulus_id: String,
    pub file: String,
    pub entry: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialRef {
    pub subject_id: String,
    pub stimulus_id: String,
    pub file: String,
    pub entry: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub n_tokens: usize,
    pub token_dim: usize,
    pub repetition_policy: RepetitionPolicy,
    pub subjects: Vec<SubjectDecl>,
    pub embeddings: Vec<EmbeddingRef>,
    pub trials: Vec<TrialRef>,
}

impl DatasetManifest {
    /// Keeps `per_subject` seeded-uniform training trials per subject.
    pub fn subset(&self, per_subject: usize, seed: u64) -> Result<DatasetManifest> {
        let keys: Vec<(&str, Split)> = self.trials.iter().map(|t| (t.subject_id.as_str(), t.split)).collect();
        let subjects: Vec<&str> = self.subjects.iter().map(|s| s.id.as_str()).collect();
        let keep = subset_indices(&subjects, &keys, per_subject, seed)?;
        Ok(DatasetManifest {
            trials: keep.into_iter().map(|i| self.trials[i].clone()).collect(),
            ..self.clone()
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

fn invalid(msg: String) -> Error {
    Error::Validation(msg)
}

/// A manifest whose invariants have all been checked, with payloads loaded on demand.
#[derive(Debug)]
pub struct Dataset {
    manifest: DatasetManifest,
    root: PathBuf,
    trial_headers: Vec<MftIndexEntry>,
    embedding_headers: BTreeMap<String, (PathBuf, MftIndexEntry)>,
}

/// Parses and eagerly validates a manifest file.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Dataset::new(manifest, root)
}

impl Dataset {
    pub fn new(manifest: DatasetManifest, root: PathBuf) -> Result<Self> {
        let m = &manifest;
        if m.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                m.schema_version
            )));
        }
        if m.n_tokens == 0 || m.token_dim == 0 {
            return Err(invalid("n_tokens and token_dim must be positive".into()));
        }
        let mut subjects = BTreeMap::new();
        for s in &m.subjects {
            if s.id.is_empty() || s.voxel_count == 0 {
                return Err(invalid(format!("subject {:?} needs a non-empty id and ≥1 voxel", s.id)));
            }
            if subjects.insert(s.id.as_str(), s.voxel_count).is_some() {
                return Err(invalid(format!("duplicate subject `{}`", s.id)));
            }
        }

        let mut indexes: BTreeMap<PathBuf, BTreeMap<String, MftIndexEntry>> = BTreeMap::new();
        let mut header = |file: &str, entry: &str, owner: &str| -> Result<(PathBuf, MftIndexEntry)> {
            let path = root.join(file);
            if !indexes.contains_key(&path) {
                let idx = read_mft_index(&path).map_err(|e| invalid(format!("{owner}: {e}")))?;
                indexes.insert(path.clone(), idx.into_iter().map(|h| (h.name.clone(), h)).collect());
            }
            let h = indexes[&path]
                .get(entry)
                .ok_or_else(|| invalid(format!("{owner}: entry `{entry}` not found in {file}")))?;
            Ok((path, h.clone()))
        };

        let mut embedding_headers = BTreeMap::new();
        for e in &m.embeddings {
            if e.stimulus_id.is_empty() {
                return Err(invalid("embedding with empty stimulus_id".into()));
            }
            let owner = format!("embedding `{}`", e.stimulus_id);
            let (path, h) = header(&e.file, &e.entry, &owner)?;
            if h.dims != [m.n_tokens, m.token_dim] {
                return Err(invalid(format!(
                    "{owner}: dims {:?}, expected [{}, {}]",
                    h.dims, m.n_tokens, m.token_dim
                )));
            }
            if embedding_headers.insert(e.stimulus_id.clone(), (path, h)).is_some() {
                return Err(invalid(format!(
                    "stimulus `{}` has more than one embedding",
                    e.stimulus_id
                )));
            }
        }

        if m.trials.is_empty() {
            return Err(invalid("manifest lists no trials".into()));
        }
        let mut trial_headers = Vec::with_capacity(m.trials.len());
        let mut seen = BTreeSet::new();
        for (i, t) in m.trials.iter().enumerate() {
            let owner = format!("trial {i}");
            let &f = subjects
                .get(t.subject_id.as_str())
                .ok_or_else(|| invalid(format!("{owner}: undeclared subject `{}`", t.subject_id)))?;
            if t.stimulus_id.is_empty() {
                return Err(invalid(format!("{owner}: empty stimulus_id")));
            }
            if !embedding_headers.contains_key(&t.stimulus_id) {
                return Err(invalid(format!(
                    "{owner}: no embedding for stimulus `{}`",
                    t.stimulus_id
                )));
            }
            if !seen.insert((t.file.as_str(), t.entry.as_str())) {
                return Err(invalid(format!(
                    "{owner}: voxel entry `{}` in {} used twice",
                    t.entry, t.file
                )));
            }
            let (_, h) = header(&t.file, &t.entry, &owner)?;
            if h.dims != [f] {
                return Err(invalid(format!(
                    "{owner}: subject `{}` declares {f} voxels, file has dims {:?}",
                    t.subject_id, h.dims
                )));
            }
            trial_headers.push(h);
        }

        Ok(Self {
            manifest,
            root,
            trial_headers,
            embedding_headers,
        })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn trial_count(&self) -> usize {
        self.manifest.trials.len()
    }

    pub fn voxels(&self, trial: usize) -> Result<Vec<f32>> {
        let t = &self.manifest.trials[trial];
        let value = read_mft_entry(&self.root.join(&t.file), &self.trial_headers[trial])?;
        Ok(value.to_real::<f32>().into_data())
    }

    pub fn embedding(&self, stimulus: &str) -> Result<Tensor<f32>> {
        let (path, h) = self
            .embedding_headers
            .get(stimulus)
            .ok_or_else(|| Error::Data(format!("no embedding for stimulus `{stimulus}`")))?;
        Ok(read_mft_entry(path, h)?.to_real())
    }

    /// Loads every referenced payload.
    pub fn to_corpus(&self) -> Result<Corpus> {
        let mut embeddings = BTreeMap::new();
        for e in &self.manifest.embeddings {
            embeddings.insert(e.stimulus_id.clone(), self.embedding(&e.stimulus_id)?);
        }
        let trials = (0..self.trial_count())
            .map(|i| {
                let t = &self.manifest.trials[i];
                Ok(Trial {
                    subject: t.subject_id.clone(),
                    stimulus: t.stimulus_id.clone(),
                    split: t.split,
                    voxels: self.voxels(i)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Corpus {
            n_tokens: self.manifest.n_tokens,
            token_dim: self.manifest.token_dim,
            subjects: self.manifest.subjects.clone(),
            trials,
            embeddings,
        })
    }
}

fn voxel_file(subject: &str) -> String {
    format!("voxels_{subject}.mft")
}

const EMBEDDING_FILE: &str = "embeddings.mft";

/// Writes `corpus` as MFT1 payloads plus a manifest under `dir`.
/// Returns the manifest path.
pub fn write_dataset(corpus: &Corpus, dir: &Path, policy: RepetitionPolicy) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let embeddings: Vec<MftEntry> = corpus
        .embeddings
        .iter()
        .map(|(id, t)| MftEntry::new(id.clone(), MftValue::F32(t.clone())))
        .collect();
    write_mft(&dir.join(EMBEDDING_FILE), &embeddings)?;

    let mut trials = Vec::with_capacity(corpus.trials.len());
    let mut per_subject: BTreeMap<&str, Vec<MftEntry>> = BTreeMap::new();
    for (i, t) in corpus.trials.iter().enumerate() {
        let entry = format!("t{i:06}");
        per_subject
            .entry(t.subject.as_str())
            .or_default()
            .push(MftEntry::new(entry.clone(), Tensor::vector(t.voxels.clone())?));
        trials.push(TrialRef {
            subject_id: t.subject.clone(),
            stimulus_id: t.stimulus.clone(),
            file: voxel_file(&t.subject),
            entry,
            split: t.split,
        });
    }
    for (subject, entries) in &per_subject {
        write_mft(&dir.join(voxel_file(subject)), entries)?;
    }

    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        n_tokens: corpus.n_tokens,
        token_dim: corpus.token_dim,
        repetition_policy: policy,
        subjects: corpus.subjects.clone(),
        embeddings: corpus
            .embeddings
            .keys()
            .map(|id| EmbeddingRef {
                stimulus_id: id.clone(),
                file: EMBEDDING_FILE.into(),
                entry: id.clone(),
            })
            .collect(),
        trials,
    };
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest.to_json()?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
