//! Storage formats, dataset manifests and the synthetic generator.

mod corpus;
mod manifest;
mod mft;
mod synthetic;

pub use corpus::{subset_indices, Corpus, Sample, Split, Trial};
pub use manifest::{
    load_manifest, write_dataset, Dataset, DatasetManifest, EmbeddingRef, RepetitionPolicy, TrialRef, MANIFEST_FILE,
    SCHEMA_VERSION,
};
pub use mft::{
    decode_mft, encode_mft, read_mft, read_mft_entry, read_mft_index, write_mft, write_tensors, MftEntry,
    MftIndexEntry, MftValue, MAGIC as MFT_MAGIC, VERSION as MFT_VERSION,
};
pub use synthetic::{
    generate_synthetic, stimulus_id, write_synthetic, SyntheticData, SyntheticOracle, SyntheticSpec, ORACLE_FILE,
    SPEC_FILE,
};
