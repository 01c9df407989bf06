//! Interaction logs, preprocessing, splits, sampling, and synthetic data.

mod context;
mod dataset;
mod io;
mod sampling;
mod synth;

pub use context::{ContextFeaturizer, ContextVector, CONTEXT_DIM};
pub use dataset::{
    AttributeKind, AttributeSource, DatasetStats, Event, InteractionDataset, RawInteraction, SplitSpec,
    MIN_INTERACTIONS_EXCLUSIVE,
};
pub use io::{load_attributes, load_dataset, load_interactions, parse_interactions};
pub use sampling::{random_sequence_cut, sample_excluding, sample_negatives};
pub use synth::{generate_synthetic, generate_with_truth, SynthConfig, SynthTruth};
