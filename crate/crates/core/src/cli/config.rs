//! Run configs: a preset base, deep-merged with a JSON file, then `--set`
//! overrides, then deserialized under a strict schema.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::eval::Scoring;
use crate::model::{ModelConfig, SubjectDecl};
use crate::objective::LossConfig;
use crate::train::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Full,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            other => Err(Error::Usage(format!("unknown preset `{other}` (expected desk|full)"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    #[serde(default)]
    pub scoring: Scoring,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSettings {
    pub seeds: Vec<u64>,
    /// Training trials per subject for the data-size grid.
    pub sizes: Vec<usize>,
    /// Subject scored by the data-size ablation. Defaults to the first one.
    #[serde(default)]
    pub subject: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub preset: Preset,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Manifest path, relative to the output directory.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSettings,
    pub ablation: AblationSettings,
}

fn without_seed<T: Serialize>(v: &T) -> Value {
    let mut v = serde_json::to_value(v).expect("config types serialize");
    if let Value::Object(m) = &mut v {
        m.remove("seed");
    }
    v
}

/// Preset defaults with every seed left out, so a run must name its seeds.
pub fn preset_base(preset: Preset) -> Value {
    let synthetic = SyntheticSpec::desk(0);
    let mut model = ModelConfig::desk(Vec::new(), 0);
    let mut spec = synthetic.clone();
    if preset == Preset::Full {
        model = ModelConfig::full(Vec::new(), 0);
        spec.n_tokens = model.n_tokens;
        spec.token_dim = model.token_dim;
    }
    let quarter = (synthetic.n_stimuli - synthetic.n_test) / 4;
    json!({
        "version": CONFIG_VERSION,
        "preset": preset,
        "synthetic": without_seed(&spec),
        "model": without_seed(&model),
        "loss": LossConfig::default(),
        "train": without_seed(&TrainConfig::desk(0)),
        "eval": EvalSettings::default(),
        "ablation": AblationSettings {
            seeds: vec![0, 1, 2],
            sizes: vec![quarter],
            subject: None,
        },
    })
}

/// Recursively overlays `top` onto `base`. Objects merge key by key; any
/// other value replaces.
pub fn deep_merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Sets a dotted path. The value is parsed as JSON when possible, otherwise
/// taken as a string.
pub fn set_path(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("--set expects key=value, got `{assignment}`")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Usage(format!("--set has an empty key segment in `{key}`")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Usage(format!("--set {key}: `{part}` is not inside an object")))?;
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    let obj = cur
        .as_object_mut()
        .ok_or_else(|| Error::Usage(format!("--set {key}: parent is not an object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Inputs for [`resolve_config`].
#[derive(Clone, Debug, Default)]
pub struct ConfigSources<'a> {
    pub file: Option<&'a Path>,
    pub preset: Option<Preset>,
    pub sets: &'a [String],
    /// Applied to the model, train and synthetic seeds.
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    /// Fill absent seeds with 0 (for commands where seeds do not matter).
    pub default_seeds: bool,
}

pub fn resolve_config(src: &ConfigSources<'_>) -> Result<RunConfig> {
    let file: Option<Value> = match src.file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Some(serde_json::from_str(&text)?)
        }
        None => None,
    };
    let mut overrides = Value::Object(Map::new());
    for s in src.sets {
        set_path(&mut overrides, s)?;
    }

    let preset = match src.preset {
        Some(p) => p,
        None => {
            let named = overrides
                .get("preset")
                .or_else(|| file.as_ref().and_then(|f| f.get("preset")));
            match named {
                Some(v) => serde_json::from_value(v.clone())?,
                None => Preset::Desk,
            }
        }
    };

    let mut doc = preset_base(preset);
    for layer in file.into_iter().chain(std::iter::once(overrides)) {
        if layer.get("dataset").is_some_and(|d| !d.is_null()) && layer.get("synthetic").is_none() {
            doc.as_object_mut().expect("base is an object").remove("synthetic");
        }
        deep_merge(&mut doc, layer);
    }
    doc["preset"] = serde_json::to_value(preset)?;

    let sections = ["model", "train", "synthetic"];
    for section in sections {
        let Some(obj) = doc.get_mut(section).and_then(Value::as_object_mut) else {
            continue;
        };
        if let Some(seed) = src.seed {
            obj.insert("seed".into(), seed.into());
        } else if src.default_seeds && !obj.contains_key("seed") {
            obj.insert("seed".into(), 0.into());
        }
    }
    if let Some(e) = src.epochs {
        doc["train"]["epochs"] = e.into();
    }

    let cfg: RunConfig = serde_json::from_value(doc)?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        match (&self.dataset, &self.synthetic) {
            (Some(_), Some(_)) => return Err(Error::Config("give either `dataset` or `synthetic`, not both".into())),
            (None, None) => return Err(Error::Config("one of `dataset` or `synthetic` is required".into())),
            _ => {}
        }
        if let Some(s) = &self.synthetic {
            s.validate()?;
        }
        self.loss.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Model config with subjects taken from the data source.
    pub fn model_for(&self, subjects: &[SubjectDecl]) -> Result<ModelConfig> {
        let mut m = self.model.clone();
        if m.subjects.is_empty() {
            m.subjects = subjects.to_vec();
        } else if m.subjects != subjects {
            return Err(Error::Config(
                "model.subjects disagrees with the dataset; omit it to inherit the dataset's subjects".into(),
            ));
        }
        m.validate()?;
        Ok(m)
    }
}
