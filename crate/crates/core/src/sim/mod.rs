//! The sortation-system simulator.

mod action;
mod config;
mod dynamics;
mod episode;
pub mod scenario;
mod state;

use sha2::{Digest, Sha256};

pub use action::{validate_action, Action, Move, Violation};
pub use config::{
    JamMode, SimConfig, BUFFER_NAMES, B_12, B_23, B_IN, B_OUT, CONFIG_SCHEMA_VERSION, N_BUFFERS, N_STAGES,
};
pub use dynamics::{
    estimate_station_flow, jam_multiplier, station_flow, step, throttle, Event, PolicyErrorKind, StepResult,
};
pub use episode::{
    read_shift_logs, run_episode, simulate, write_shift_logs, Decided, EpisodeOptions, InvalidActionMode, LogHeader,
    ShiftLog, TickRecord, SHIFT_LOG_SCHEMA_VERSION,
};
pub use scenario::{generate_scenario, ScenarioParams};
pub use state::{Station, SystemState, WorkerId};

/// Hex SHA-256 of a value's JSON encoding.
pub fn digest_json<T: serde::Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("value serializes");
    hex::encode(Sha256::digest(&bytes))
}
