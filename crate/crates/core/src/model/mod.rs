//! The multi-subject encoder: per-subject projections and tokens feeding a
//! single shared pre-norm transformer.

mod adapter;
mod config;
mod count;
mod encoder;
mod params;

pub use adapter::{adapter_forward, AdapterParams};
pub use config::{AdapterConfig, ModelConfig, SubjectDecl};
pub use count::{enumerated_param_count, param_count, subject_increment, ParamCount, ParamGroup};
pub use encoder::{attention, attention_block, encode, forward, forward_index, project, subject_project, Binder};
pub use params::{layout, ModelParams, ParamKind, ParamSpec};
