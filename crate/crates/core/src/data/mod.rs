//! Vocabularies, feature and manifest files, synthetic corpora, batching
//! and error-rate aggregation.

mod batch;
pub mod features;
mod manifest;
mod metrics;
mod synth;
mod vocab;

pub use batch::{make_batches, Batch};
pub use features::{decode_features, encode_features, read_features, write_features};
pub use manifest::{
    format_hypotheses, load_manifest, load_manifest_features, parse_hypotheses, parse_manifest, write_dataset,
    ManifestRow,
};
pub use metrics::{aggregate_cer, ErrorRate};
pub use synth::{synth_generate, synth_vocabulary, SynthConfig, SynthData};
pub use vocab::{TokenMode, Vocabulary, BLANK_TOKEN};

use crate::tensor::Tensor;

/// One labelled feature sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// `T × d_feat`.
    pub features: Tensor,
    /// Token ids, never the blank.
    pub transcript: Vec<u32>,
}
