//! Landmark-based synchronization scoring, dataset curation and
//! embedding-based evaluation for paired portrait videos.

pub mod channels;
pub mod curation;
pub mod dsp;
pub mod evalmetrics;
pub mod landmarks;
pub mod synthbench;

pub use channels::{Channel, ChannelSet, ChannelSignal, Stage};
pub use curation::{
    build_manifest, leave_one_out_weights, rank, score_pair, Composition, CurationError,
    CurationManifest, PairScore, Ratio, ScoringWeights,
};
pub use dsp::{DspConfig, DspError};
pub use evalmetrics::{EmbeddingBundle, MetricError, MetricReport};
pub use landmarks::{LandmarkBundle, LandmarkError, PairKind, PairRecord, View};
pub use synthbench::{generate_pair, ranking_fidelity, SynthSpec};
