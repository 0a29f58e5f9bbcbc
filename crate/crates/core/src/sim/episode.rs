use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::action::{validate_action, Action};
use super::config::{SimConfig, N_BUFFERS, N_STAGES};
use super::dynamics::{step, Event};
use super::state::SystemState;
use crate::agents::Policy;
use crate::error::{Error, Result};
use crate::seed;

pub const SHIFT_LOG_SCHEMA_VERSION: u32 = 1;

/// What to do when a policy emits an action that fails validation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidActionMode {
    /// Apply the empty action instead and log an `action_rejected` event.
    #[default]
    RejectToNoop,
    Abort,
}

/// One tick of a shift log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u32,
    /// Digest of the state the action was taken in.
    pub state_digest: String,
    /// The action actually applied.
    pub action: Action,
    pub reward: f64,
    /// `[line][stage]` flows during the tick.
    pub stage_flows: Vec<[f64; N_STAGES]>,
    /// `[line][role]` buffer levels at the end of the tick.
    pub buffer_levels: Vec<[f64; N_BUFFERS]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<Event>,
}

/// One episode: initial state, per-tick actions and observed metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftLog {
    pub shift_id: String,
    pub seed: u64,
    pub policy_id: String,
    pub config: SimConfig,
    pub records: Vec<TickRecord>,
    /// `states[t]` is the state before tick `t`; one longer than `records`.
    pub states: Vec<SystemState>,
}

impl ShiftLog {
    pub fn initial(&self) -> &SystemState {
        &self.states[0]
    }

    pub fn final_state(&self) -> &SystemState {
        self.states.last().expect("a shift log always holds its initial state")
    }

    pub fn total_reward(&self) -> f64 {
        self.records.iter().map(|r| r.reward).sum()
    }

    /// Units dispatched during the shift.
    pub fn output(&self) -> f64 {
        self.final_state().cumulative_output - self.initial().cumulative_output
    }

    pub fn actions(&self) -> impl Iterator<Item = &Action> {
        self.records.iter().map(|r| &r.action)
    }

    pub fn n_moves(&self) -> usize {
        self.records.iter().map(|r| r.action.moves.len()).sum()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        let header = LogLine::Header(Box::new(LogHeader {
            schema_version: SHIFT_LOG_SCHEMA_VERSION,
            shift_id: self.shift_id.clone(),
            seed: self.seed,
            policy_id: self.policy_id.clone(),
            config: self.config.clone(),
            initial_state: self.initial().clone(),
        }));
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut out, &LogLineRef::Tick(r))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema_version: u32,
    pub shift_id: String,
    pub seed: u64,
    pub policy_id: String,
    pub config: SimConfig,
    pub initial_state: SystemState,
}

#[derive(Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine {
    Header(Box<LogHeader>),
    Tick(TickRecord),
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLineRef<'a> {
    Tick(&'a TickRecord),
}

pub fn write_shift_logs<W: Write>(logs: &[ShiftLog], mut out: W) -> Result<()> {
    for log in logs {
        log.write_jsonl(&mut out)?;
    }
    Ok(())
}

/// Reads one or more concatenated shift logs. States are rebuilt by
/// re-simulating the recorded actions and checked against the stored digests.
pub fn read_shift_logs<R: BufRead>(input: R) -> Result<Vec<ShiftLog>> {
    let mut logs = Vec::new();
    let mut current: Option<(LogHeader, Vec<TickRecord>)> = None;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine =
            serde_json::from_str(&line).map_err(|e| Error::Data(format!("shift log line {}: {e}", i + 1)))?;
        match parsed {
            LogLine::Header(h) => {
                if let Some((h, recs)) = current.take() {
                    logs.push(rebuild(h, recs)?);
                }
                if h.schema_version != SHIFT_LOG_SCHEMA_VERSION {
                    return Err(Error::Data(format!(
                        "shift log schema {} unsupported",
                        h.schema_version
                    )));
                }
                current = Some((*h, Vec::new()));
            }
            LogLine::Tick(r) => match current.as_mut() {
                Some((_, recs)) => recs.push(r),
                None => return Err(Error::Data(format!("line {}: tick record before header", i + 1))),
            },
        }
    }
    if let Some((h, recs)) = current.take() {
        logs.push(rebuild(h, recs)?);
    }
    Ok(logs)
}

fn rebuild(header: LogHeader, records: Vec<TickRecord>) -> Result<ShiftLog> {
    header.config.validate()?;
    let mut states = Vec::with_capacity(records.len() + 1);
    states.push(header.initial_state);
    for r in &records {
        let state = states.last().expect("non-empty");
        if state.digest() != r.state_digest {
            return Err(Error::Data(format!(
                "shift {} tick {}: state digest mismatch",
                header.shift_id, r.tick
            )));
        }
        let res = step(
            state,
            &r.action,
            &header.config,
            Some(seed::tick_seed(header.seed, state.tick)),
        )?;
        states.push(res.next_state);
    }
    Ok(ShiftLog {
        shift_id: header.shift_id,
        seed: header.seed,
        policy_id: header.policy_id,
        config: header.config,
        records,
        states,
    })
}

#[derive(Debug, Clone)]
pub struct EpisodeOptions {
    pub shift_id: String,
    pub on_invalid: InvalidActionMode,
    /// Overrides `config.episode_length` when set.
    pub ticks: Option<u32>,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        Self {
            shift_id: "shift".into(),
            on_invalid: InvalidActionMode::RejectToNoop,
            ticks: None,
        }
    }
}

/// The decision made at one tick, plus any events the decision maker logged.
pub struct Decided {
    pub action: Action,
    pub events: Vec<Event>,
}

/// Core loop shared by policy rollouts and replays.
pub fn simulate<F>(
    initial: &SystemState,
    config: &SimConfig,
    seed: u64,
    policy_id: &str,
    opts: &EpisodeOptions,
    mut decide: F,
) -> Result<ShiftLog>
where
    F: FnMut(&SystemState, usize) -> Result<Decided>,
{
    config.validate()?;
    let ticks = opts.ticks.unwrap_or(config.episode_length) as usize;
    let mut states = Vec::with_capacity(ticks + 1);
    let mut records = Vec::with_capacity(ticks);
    states.push(initial.clone());
    for t in 0..ticks {
        let state = &states[t];
        let Decided { mut action, mut events } = decide(state, t)?;
        let violations = validate_action(state, &action, config);
        if !violations.is_empty() {
            match opts.on_invalid {
                InvalidActionMode::Abort => {
                    return Err(Error::EpisodeAborted {
                        tick: state.tick,
                        reason: Error::InvalidAction(violations).to_string(),
                    })
                }
                InvalidActionMode::RejectToNoop => {
                    events.push(Event::ActionRejected { violations });
                    action = Action::noop();
                }
            }
        }
        let res = step(state, &action, config, Some(seed::tick_seed(seed, state.tick)))?;
        events.extend(res.events);
        records.push(TickRecord {
            tick: state.tick,
            state_digest: state.digest(),
            action,
            reward: res.reward,
            stage_flows: res.per_stage_flow,
            buffer_levels: res.next_state.buffers.clone(),
            events,
        });
        states.push(res.next_state);
    }
    Ok(ShiftLog {
        shift_id: opts.shift_id.clone(),
        seed,
        policy_id: policy_id.to_owned(),
        config: config.clone(),
        records,
        states,
    })
}

/// Rolls `policy` out for `episode_length` ticks from `initial`.
pub fn run_episode(
    initial: &SystemState,
    policy: &dyn Policy,
    config: &SimConfig,
    seed: u64,
    opts: &EpisodeOptions,
) -> Result<ShiftLog> {
    simulate(initial, config, seed, &policy.id(), opts, |state, _| {
        let d = policy.decide(state, config)?;
        Ok(Decided {
            action: d.action,
            events: d.events,
        })
    })
}
