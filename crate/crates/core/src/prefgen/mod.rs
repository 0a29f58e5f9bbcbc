//! The language-model-facing data layer: canonical state text, lenient action
//! parsing, and simulator-scored preference pairs.

mod generate;
mod parse;
mod text;

pub use generate::{
    dataset_file_name, generate_preferences, iterate_preferences, rollout_score, states_from_logs, Continuation,
    DatasetHeader, DroppedCandidate, FixedProposals, PolicyProposals, PrefParams, PrefState, PreferenceDataset,
    PreferencePair, ProposalSource, Provenance, DATASET_SCHEMA_VERSION, DEFAULT_HORIZON, DEFAULT_MARGIN,
};
pub use parse::{find_json_array, parse_action, ParseError};
pub use text::serialize_state;
