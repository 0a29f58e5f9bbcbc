//! Seeded synthetic shift start conditions.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{SimConfig, N_STAGES};
use super::state::{Station, SystemState, WorkerId};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioParams {
    pub n_workers: usize,
    /// Per-line demand is the base arrival rate times `U[1 - s, 1 + s]`.
    pub arrival_spread: f64,
    /// Initial buffer levels are `U[0, max] * capacity`.
    pub initial_fill_max: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            n_workers: 30,
            arrival_spread: 0.35,
            initial_fill_max: 0.6,
        }
    }
}

pub fn worker_ids(n: usize) -> Vec<WorkerId> {
    let width = n.saturating_sub(1).to_string().len().max(2);
    (0..n).map(|i| WorkerId(format!("w{i:0width$}"))).collect()
}

/// Draws a shift: per-line demand, a random feasible staffing and random
/// initial buffer levels. Returns the shift's config and its initial state.
pub fn generate_scenario(base: &SimConfig, params: &ScenarioParams, scenario_seed: u64) -> (SimConfig, SystemState) {
    let mut rng = seed::rng(seed::derive(scenario_seed, "scenario", 0));
    let mut config = base.clone();
    for a in config.arrival_rate.iter_mut() {
        let f = 1.0 + params.arrival_spread * (2.0 * rng.gen::<f64>() - 1.0);
        *a = (*a * f).max(0.0);
    }

    let ids = worker_ids(params.n_workers);
    let mut state = SystemState::empty(&config, ids.iter().cloned());
    let mut slots: Vec<Station> = (0..config.n_lines)
        .flat_map(|l| (0..N_STAGES).flat_map(move |s| std::iter::repeat_n(Station::new(l, s), base.slot_capacity[s])))
        .collect();
    slots.shuffle(&mut rng);
    for (w, st) in ids.iter().zip(slots) {
        state.assignment.insert(w.clone(), Some(st));
    }

    for (l, buf) in state.buffers.iter_mut().enumerate() {
        for (b, level) in buf.iter_mut().enumerate() {
            *level = config.buffer_capacity[l][b] * params.initial_fill_max * rng.gen::<f64>();
        }
    }
    (config, state.with_balanced_accounting())
}
