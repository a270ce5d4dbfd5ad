//! Checkpoints are a pair of files sharing a stem: `<stem>.json` holds the
//! configuration header and `<stem>.mft` the tensors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::AdamW;
use crate::data::{read_mft, write_mft, MftEntry};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::numerics::Tensor;
use crate::objective::LossConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

const M_PREFIX: &str = "adamw.m.";
const V_PREFIX: &str = "adamw.v.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub version: u32,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub optimizer_step: u64,
    pub has_optimizer: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParams<f32>,
    pub optimizer: Option<AdamW<f32>>,
}

/// Strips a trailing `.json` or `.mft` so either file of the pair can be named.
pub fn checkpoint_stem(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("mft") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

impl Checkpoint {
    /// Writes both files. Returns the header path.
    pub fn save(&self, path: &Path) -> Result<PathBuf> {
        let stem = checkpoint_stem(path);
        let mut entries: Vec<MftEntry> = self.params.named().map(|(n, t)| MftEntry::new(n, t.clone())).collect();
        if let Some(opt) = &self.optimizer {
            for (spec, (m, v)) in self.params.specs().iter().zip(opt.m.iter().zip(&opt.v)) {
                let dims = spec.dims.clone();
                entries.push(MftEntry::new(
                    format!("{M_PREFIX}{}", spec.name),
                    Tensor::new(dims.clone(), m.clone())?,
                ));
                entries.push(MftEntry::new(
                    format!("{V_PREFIX}{}", spec.name),
                    Tensor::new(dims, v.clone())?,
                ));
            }
        }
        write_mft(&with_ext(&stem, "mft"), &entries)?;
        let header = with_ext(&stem, "json");
        let text = serde_json::to_string_pretty(&self.header)? + "\n";
        std::fs::write(&header, text).map_err(|e| Error::io(&header, e))?;
        Ok(header)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let stem = checkpoint_stem(path);
        let header_path = with_ext(&stem, "json");
        let text = std::fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
        let header: CheckpointHeader =
            serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", header_path.display())))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "{}: checkpoint version {} unsupported",
                header_path.display(),
                header.version
            )));
        }
        header.model.validate()?;

        let mut params = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for e in read_mft(&with_ext(&stem, "mft"))? {
            let t = e.value.to_real::<f32>();
            if let Some(n) = e.name.strip_prefix(M_PREFIX) {
                m.push((n.to_string(), t));
            } else if let Some(n) = e.name.strip_prefix(V_PREFIX) {
                v.push((n.to_string(), t));
            } else {
                params.push((e.name, t));
            }
        }
        let params = ModelParams::from_named(&header.model, params)?;
        let optimizer = if header.has_optimizer {
            let m = ModelParams::from_named(&header.model, m)?;
            let v = ModelParams::from_named(&header.model, v)?;
            Some(AdamW {
                step: header.optimizer_step,
                m: m.tensors().iter().map(|t| t.data().to_vec()).collect(),
                v: v.tensors().iter().map(|t| t.data().to_vec()).collect(),
            })
        } else if !m.is_empty() || !v.is_empty() {
            return Err(Error::Validation(
                "checkpoint has optimizer tensors but the header says none".into(),
            ));
        } else {
            None
        };
        Ok(Self {
            header,
            params,
            optimizer,
        })
    }
}
