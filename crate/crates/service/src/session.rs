use serde::{Deserialize, Serialize};
use sortflow::agents::{best_single_move, GreedyBottleneck, NoReallocation, Policy};
use sortflow::learn::{FactorizedPolicy, SampledPolicy};
use sortflow::prefgen::{rollout_score, serialize_state, Continuation, PreferencePair, Provenance};
use sortflow::seed;
use sortflow::sim::{step, Action, Event, ShiftLog, SimConfig, SystemState, TickRecord};
use sortflow::Error;

/// Why a session operation was refused.
#[derive(Debug)]
pub enum SessionError {
    Done,
    NoSuggestions,
    UnknownLabel(String),
    BadRequest(String),
    Core(Error),
}

impl From<Error> for SessionError {
    fn from(e: Error) -> Self {
        SessionError::Core(e)
    }
}

impl From<serde_json::Error> for SessionError {
    fn from(e: serde_json::Error) -> Self {
        SessionError::Core(e.into())
    }
}

type Result<T> = std::result::Result<T, SessionError>;

pub const HUMAN_SOURCE: &str = "human";

/// One suggested action with its predicted rollout score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub label: String,
    pub source: String,
    pub action: Action,
    pub predicted_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestions {
    pub tick: u32,
    pub horizon: u32,
    pub continuation_policy: String,
    pub candidates: Vec<Candidate>,
}

/// Exactly one of `choice` (a suggestion label) or `action` is required.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitRequest {
    #[serde(default)]
    pub choice: Option<String>,
    #[serde(default)]
    pub action: Option<Action>,
    #[serde(default)]
    pub rationale: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub tick: u32,
    pub reward: f64,
    pub done: bool,
    pub applied: Action,
    pub events: Vec<Event>,
    pub preferences: Vec<PreferencePair>,
}

/// A preference pair tagged with the session it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanPreference {
    pub session_id: String,
    pub pair: PreferencePair,
}

/// A live episode. `log.records.len()` is always the number of ticks taken.
#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub log: ShiftLog,
    pub pending: Option<Suggestions>,
    pub preferences: Vec<PreferencePair>,
}

impl Session {
    pub fn new(id: String, config: SimConfig, initial: SystemState, seed: u64) -> Self {
        Self {
            log: ShiftLog {
                shift_id: id.clone(),
                seed,
                policy_id: HUMAN_SOURCE.into(),
                config,
                records: Vec::new(),
                states: vec![initial],
            },
            id,
            pending: None,
            preferences: Vec::new(),
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.log.config
    }

    pub fn state(&self) -> &SystemState {
        self.log.final_state()
    }

    pub fn tick(&self) -> u32 {
        self.log.records.len() as u32
    }

    pub fn done(&self) -> bool {
        self.tick() >= self.config().episode_length
    }

    pub fn state_text(&self) -> String {
        serialize_state(self.state(), self.config())
    }

    /// Cached per tick so repeated requests show the same pair.
    pub fn suggest(
        &mut self,
        trained: Option<&FactorizedPolicy>,
        horizon: u32,
        continuation: Continuation,
    ) -> Result<Suggestions> {
        if self.done() {
            return Err(SessionError::Done);
        }
        if let Some(s) = &self.pending {
            if s.tick == self.tick() {
                return Ok(s.clone());
            }
        }
        let state = self.state().clone();
        let config = self.config().clone();
        let first: Box<dyn Policy> = match trained {
            Some(p) => Box::new(SampledPolicy {
                policy: p.clone(),
                seed: seed::derive(self.log.seed, "suggest", 0),
            }),
            None => Box::new(NoReallocation),
        };
        let second = GreedyBottleneck::default();
        let norm = |a: Action| a.effective(&state).canonical();
        let a = norm(first.decide(&state, &config)?.action);
        let mut b = norm(second.decide(&state, &config)?.action);
        let mut b_source = second.id();
        if b == a {
            // Distinct candidates: fall back to the best single move, then to
            // keeping current staffing.
            match best_single_move(&state, &config).map(norm).filter(|m| *m != a) {
                Some(m) => {
                    b = m;
                    b_source = "best_single_move".into();
                }
                None => {
                    b = Action::noop();
                    b_source = NoReallocation.id();
                }
            }
        }
        let cont = continuation.policy();
        let mut candidates = vec![Candidate {
            label: "A".into(),
            source: first.id(),
            predicted_score: rollout_score(&state, &config, &a, horizon, cont.as_ref())?,
            action: a.clone(),
        }];
        if b != a {
            candidates.push(Candidate {
                label: "B".into(),
                source: b_source,
                predicted_score: rollout_score(&state, &config, &b, horizon, cont.as_ref())?,
                action: b,
            });
        }
        let s = Suggestions {
            tick: self.tick(),
            horizon,
            continuation_policy: cont.id(),
            candidates,
        };
        self.pending = Some(s.clone());
        Ok(s)
    }

    /// Validates, records preferences against the pending pair and advances
    /// one tick. Nothing changes when the request is rejected.
    pub fn submit(&mut self, req: SubmitRequest, continuation: Continuation) -> Result<SubmitResponse> {
        if self.done() {
            return Err(SessionError::Done);
        }
        let pending = self.pending.take().filter(|s| s.tick == self.tick());
        let outcome = self.submit_inner(req, pending.as_ref(), continuation);
        if outcome.is_err() {
            self.pending = pending;
        }
        outcome
    }

    fn submit_inner(
        &mut self,
        req: SubmitRequest,
        pending: Option<&Suggestions>,
        continuation: Continuation,
    ) -> Result<SubmitResponse> {
        let state = self.state().clone();
        let config = self.config().clone();
        let (action, chosen_label) = match (req.choice, req.action) {
            (Some(label), None) => {
                let s = pending.ok_or(SessionError::NoSuggestions)?;
                let c = s
                    .candidates
                    .iter()
                    .find(|c| c.label == label)
                    .ok_or_else(|| SessionError::UnknownLabel(label.clone()))?;
                (c.action.clone(), Some(label))
            }
            (None, Some(action)) => {
                let violations = sortflow::sim::validate_action(&state, &action, &config);
                if !violations.is_empty() {
                    return Err(Error::InvalidAction(violations).into());
                }
                let norm = action.effective(&state).canonical();
                let label =
                    pending.and_then(|s| s.candidates.iter().find(|c| c.action == norm).map(|c| c.label.clone()));
                (action, label)
            }
            _ => {
                return Err(SessionError::BadRequest(
                    "exactly one of `choice` or `action` is required".into(),
                ))
            }
        };

        let mut pairs = Vec::new();
        if let Some(s) = pending {
            let (chosen_action, chosen_score) = match &chosen_label {
                Some(l) => {
                    let c = s
                        .candidates
                        .iter()
                        .find(|c| &c.label == l)
                        .expect("label came from this pair");
                    (c.action.clone(), c.predicted_score)
                }
                None => {
                    let cont = continuation.policy();
                    let a = action.effective(&state).canonical();
                    let score = rollout_score(&state, &config, &a, s.horizon, cont.as_ref())?;
                    (a, score)
                }
            };
            let state_text = serialize_state(&state, &config);
            let state_json = serde_json::to_value(&state)?;
            for rejected in s.candidates.iter().filter(|c| Some(&c.label) != chosen_label.as_ref()) {
                pairs.push(PreferencePair {
                    state_text: state_text.clone(),
                    state_json: state_json.clone(),
                    chosen: chosen_action.clone(),
                    rejected: rejected.action.clone(),
                    score_chosen: chosen_score,
                    score_rejected: rejected.predicted_score,
                    horizon: s.horizon,
                    continuation_policy: s.continuation_policy.clone(),
                    margin: chosen_score - rejected.predicted_score,
                    provenance: Provenance {
                        source: HUMAN_SOURCE.into(),
                        iteration: 0,
                        seed: self.log.seed,
                        state_index: state.tick as usize,
                        pair_index: pairs.len(),
                        rationale: req.rationale.clone(),
                    },
                });
            }
        }

        let res = step(
            &state,
            &action,
            &config,
            Some(seed::tick_seed(self.log.seed, state.tick)),
        )?;
        self.log.records.push(TickRecord {
            tick: state.tick,
            state_digest: state.digest(),
            action: action.clone(),
            reward: res.reward,
            stage_flows: res.per_stage_flow,
            buffer_levels: res.next_state.buffers.clone(),
            events: res.events.clone(),
        });
        self.log.states.push(res.next_state);
        self.preferences.extend(pairs.iter().cloned());
        Ok(SubmitResponse {
            tick: self.tick(),
            reward: res.reward,
            done: self.done(),
            applied: action,
            events: res.events,
            preferences: pairs,
        })
    }
}
