use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::config::SimConfig;
use super::state::{Station, SystemState, WorkerId};

/// Reassign one worker to a station.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Move {
    pub worker_id: WorkerId,
    pub to: Station,
}

impl Move {
    pub fn new(worker_id: impl Into<WorkerId>, to: Station) -> Self {
        Self {
            worker_id: worker_id.into(),
            to,
        }
    }
}

impl From<String> for WorkerId {
    fn from(s: String) -> Self {
        WorkerId(s)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MoveWire {
    worker_id: String,
    to_line: usize,
    to_stage: usize,
}

impl Serialize for Move {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        MoveWire {
            worker_id: self.worker_id.0.clone(),
            to_line: self.to.line + 1,
            to_stage: self.to.stage + 1,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Move {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = MoveWire::deserialize(d)?;
        if w.to_line == 0 || w.to_stage == 0 {
            return Err(serde::de::Error::custom("to_line and to_stage are 1-based"));
        }
        Ok(Move::new(w.worker_id, Station::new(w.to_line - 1, w.to_stage - 1)))
    }
}

/// A list of reassignments; empty means "keep current staffing".
/// Serialized as a bare JSON array of `{worker_id, to_line, to_stage}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Action {
    pub moves: Vec<Move>,
}

impl Action {
    pub fn noop() -> Self {
        Self::default()
    }

    pub fn new(moves: Vec<Move>) -> Self {
        Self { moves }
    }

    pub fn is_empty(&self) -> bool {
        self.moves.is_empty()
    }

    /// Moves sorted by worker id; two actions with the same canonical form are
    /// the same decision.
    pub fn canonical(&self) -> Action {
        let mut moves = self.moves.clone();
        moves.sort();
        Action { moves }
    }

    /// Drops moves that send a worker to the station it already occupies.
    pub fn effective(&self, state: &SystemState) -> Action {
        Action {
            moves: self
                .moves
                .iter()
                .filter(|m| state.assignment.get(&m.worker_id) != Some(&Some(m.to)))
                .cloned()
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("action serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    UnknownWorker {
        worker_id: WorkerId,
    },
    DuplicateWorker {
        worker_id: WorkerId,
    },
    NoSuchStation {
        worker_id: WorkerId,
        to: Station,
    },
    OverCapacity {
        station: Station,
        assigned: usize,
        capacity: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownWorker { worker_id } => write!(f, "unknown worker {worker_id}"),
            Violation::DuplicateWorker { worker_id } => {
                write!(f, "worker {worker_id} appears more than once")
            }
            Violation::NoSuchStation { worker_id, to } => {
                write!(f, "worker {worker_id} sent to nonexistent {to}")
            }
            Violation::OverCapacity {
                station,
                assigned,
                capacity,
            } => write!(f, "{station} would hold {assigned} workers, capacity {capacity}"),
        }
    }
}

/// Returns every way `action` breaks the action invariants against `state`.
/// Only stations receiving a worker are capacity-checked, so the empty action
/// is always valid.
pub fn validate_action(state: &SystemState, action: &Action, config: &SimConfig) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut seen = BTreeSet::new();
    let mut resulting: BTreeMap<&WorkerId, Option<Station>> = state.assignment.iter().map(|(w, s)| (w, *s)).collect();
    let mut destinations = BTreeSet::new();

    for m in &action.moves {
        if !seen.insert(&m.worker_id) {
            violations.push(Violation::DuplicateWorker {
                worker_id: m.worker_id.clone(),
            });
            continue;
        }
        if !state.assignment.contains_key(&m.worker_id) {
            violations.push(Violation::UnknownWorker {
                worker_id: m.worker_id.clone(),
            });
            continue;
        }
        if !m.to.exists_in(config) {
            violations.push(Violation::NoSuchStation {
                worker_id: m.worker_id.clone(),
                to: m.to,
            });
            continue;
        }
        resulting.insert(&m.worker_id, Some(m.to));
        destinations.insert(m.to);
    }

    for station in destinations {
        let assigned = resulting.values().filter(|s| **s == Some(station)).count();
        let capacity = config.slot_capacity[station.stage];
        if assigned > capacity {
            violations.push(Violation::OverCapacity {
                station,
                assigned,
                capacity,
            });
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_with(config: &SimConfig, placed: &[(&str, usize, usize)]) -> SystemState {
        let mut s = SystemState::empty(config, placed.iter().map(|(w, _, _)| WorkerId::from(*w)));
        for (w, l, st) in placed {
            s.assignment.insert(WorkerId::from(*w), Some(Station::new(*l, *st)));
        }
        s
    }

    #[test]
    fn empty_action_is_always_valid() {
        let c = SimConfig::with_lines(1);
        // Even an over-staffed state accepts the no-op.
        let s = state_with(&c, &[("a", 0, 2), ("b", 0, 2), ("c", 0, 2)]);
        assert!(validate_action(&s, &Action::noop(), &c).is_empty());
    }

    #[test]
    fn capacity_violation() {
        let c = SimConfig::with_lines(1);
        let s = state_with(&c, &[("a", 0, 2), ("b", 0, 2), ("c", 0, 0)]);
        let a = Action::new(vec![Move::new("c", Station::new(0, 2))]);
        let v = validate_action(&s, &a, &c);
        assert_eq!(
            v,
            vec![Violation::OverCapacity {
                station: Station::new(0, 2),
                assigned: 3,
                capacity: 2
            }]
        );
    }

    #[test]
    fn duplicate_and_unknown_workers() {
        let c = SimConfig::with_lines(1);
        let s = state_with(&c, &[("a", 0, 0)]);
        let a = Action::new(vec![
            Move::new("a", Station::new(0, 1)),
            Move::new("a", Station::new(0, 2)),
            Move::new("zz", Station::new(0, 1)),
        ]);
        let v = validate_action(&s, &a, &c);
        assert!(v.contains(&Violation::DuplicateWorker { worker_id: "a".into() }));
        assert!(v.contains(&Violation::UnknownWorker { worker_id: "zz".into() }));
    }

    #[test]
    fn swap_between_full_stations_is_valid() {
        let c = SimConfig::with_lines(1);
        let s = state_with(&c, &[("a", 0, 2), ("b", 0, 2), ("c", 0, 0)]);
        let a = Action::new(vec![
            Move::new("a", Station::new(0, 0)),
            Move::new("c", Station::new(0, 2)),
        ]);
        assert!(validate_action(&s, &a, &c).is_empty());
    }

    #[test]
    fn nonexistent_station() {
        let c = SimConfig::with_lines(1);
        let s = state_with(&c, &[("a", 0, 0)]);
        let a = Action::new(vec![Move::new("a", Station::new(3, 0))]);
        assert_eq!(validate_action(&s, &a, &c).len(), 1);
    }

    #[test]
    fn wire_format_is_one_based() {
        let a = Action::new(vec![Move::new("w3", Station::new(1, 0))]);
        assert_eq!(a.to_json(), r#"[{"worker_id":"w3","to_line":2,"to_stage":1}]"#);
        let back: Action = serde_json::from_str(&a.to_json()).unwrap();
        assert_eq!(back, a);
        assert!(serde_json::from_str::<Action>(r#"[{"worker_id":"w","to_line":0,"to_stage":1}]"#).is_err());
    }
}
