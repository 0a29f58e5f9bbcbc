//! Policies: the [`Policy`] trait, the no-reallocation baseline, the greedy
//! bottleneck heuristic, the scripted manager used to synthesize historical
//! shifts, and the bridge to externally hosted policies.

mod bridge;
mod greedy;
mod scripted;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::sim::{Action, Event, SimConfig, Station, SystemState, WorkerId};

pub use bridge::{BridgeEndpoint, BridgeErrorMode, BridgePolicy, BridgeRequest, DEFAULT_TASK};
pub use greedy::{best_single_move, GreedyBottleneck};
pub use scripted::{ScriptedManager, ScriptedManagerConfig};

/// One worker's move distribution: probability of staying plus probability per
/// destination station. Sums to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerDistribution {
    pub worker_id: WorkerId,
    pub stay: f64,
    pub destinations: Vec<(Station, f64)>,
}

impl WorkerDistribution {
    pub fn total(&self) -> f64 {
        self.stay + self.destinations.iter().map(|(_, p)| p).sum::<f64>()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyDecision {
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_worker_distribution: Option<Vec<WorkerDistribution>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale_text: Option<String>,
    /// Problems the policy ran into (bridge timeouts, unparseable replies).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<Event>,
}

impl PolicyDecision {
    pub fn from_action(action: Action) -> Self {
        Self {
            action,
            ..Default::default()
        }
    }
}

/// Maps a state to a staffing decision. Implementations hold no mutable
/// per-episode state, so one instance may drive many episodes concurrently.
pub trait Policy: Send + Sync {
    fn id(&self) -> String;

    fn decide(&self, state: &SystemState, config: &SimConfig) -> Result<PolicyDecision>;
}

/// Never moves anyone.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoReallocation;

impl Policy for NoReallocation {
    fn id(&self) -> String {
        "no_reallocation".into()
    }

    fn decide(&self, _state: &SystemState, _config: &SimConfig) -> Result<PolicyDecision> {
        Ok(PolicyDecision::default())
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn decide(&self, state: &SystemState, config: &SimConfig) -> Result<PolicyDecision> {
        (**self).decide(state, config)
    }
}

impl<P: Policy + ?Sized> Policy for std::sync::Arc<P> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn decide(&self, state: &SystemState, config: &SimConfig) -> Result<PolicyDecision> {
        (**self).decide(state, config)
    }
}

/// Picks one on-floor worker and one station with a free slot, uniformly.
pub fn random_valid_move<R: rand::Rng>(state: &SystemState, config: &SimConfig, rng: &mut R) -> Action {
    let staffing = state.staffing();
    let open: Vec<Station> = (0..config.n_lines)
        .flat_map(|l| (0..crate::sim::N_STAGES).map(move |s| Station::new(l, s)))
        .filter(|st| staffing[st.line][st.stage] < config.slot_capacity[st.stage])
        .collect();
    let movable: Vec<(&WorkerId, Station)> = state
        .assignment
        .iter()
        .filter_map(|(w, st)| st.map(|st| (w, st)))
        .filter(|(_, st)| open.iter().any(|o| o != st))
        .collect();
    if movable.is_empty() {
        return Action::noop();
    }
    let (worker, from) = movable[rng.gen_range(0..movable.len())];
    let dests: Vec<Station> = open.iter().copied().filter(|o| *o != from).collect();
    let to = dests[rng.gen_range(0..dests.len())];
    Action::new(vec![crate::sim::Move {
        worker_id: worker.clone(),
        to,
    }])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_scenario, run_episode, validate_action, EpisodeOptions, ScenarioParams};

    #[test]
    fn no_reallocation_is_always_empty() {
        let (cfg, init) = generate_scenario(&SimConfig::default(), &ScenarioParams::default(), 1);
        let log = run_episode(&init, &NoReallocation, &cfg, 1, &EpisodeOptions::default()).unwrap();
        assert_eq!(log.n_moves(), 0);
    }

    #[test]
    fn random_moves_are_valid() {
        let mut rng = crate::seed::rng(5);
        for i in 0..200 {
            let (cfg, init) = generate_scenario(&SimConfig::default(), &ScenarioParams::default(), i);
            let a = random_valid_move(&init, &cfg, &mut rng);
            assert_eq!(a.moves.len(), 1);
            assert!(validate_action(&init, &a, &cfg).is_empty());
        }
    }
}
