use std::io::{BufRead, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::text::serialize_state;
use crate::agents::{best_single_move, random_valid_move, GreedyBottleneck, NoReallocation, Policy, DEFAULT_TASK};
use crate::error::{Error, Result};
use crate::seed;
use crate::sim::{
    simulate, validate_action, Action, Decided, EpisodeOptions, JamMode, ShiftLog, SimConfig, SystemState, Violation,
};

pub const DEFAULT_HORIZON: u32 = 6;
pub const DEFAULT_MARGIN: f64 = 0.5;
pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// Policy that takes over after the scored action during a rollout.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Continuation {
    #[default]
    NoReallocation,
    GreedyBottleneck,
}

impl Continuation {
    pub fn policy(self) -> Box<dyn Policy> {
        match self {
            Continuation::NoReallocation => Box::new(NoReallocation),
            Continuation::GreedyBottleneck => Box::new(GreedyBottleneck::default()),
        }
    }

    pub fn id(self) -> String {
        self.policy().id()
    }
}

/// Cumulative stage-3 output over `horizon` ticks when `action` is applied
/// now and `continuation` decides afterwards. Jams are deterministic.
pub fn rollout_score(
    state: &SystemState,
    config: &SimConfig,
    action: &Action,
    horizon: u32,
    continuation: &dyn Policy,
) -> Result<f64> {
    let violations = validate_action(state, action, config);
    if !violations.is_empty() {
        return Err(Error::InvalidAction(violations));
    }
    let mut cfg = config.clone();
    cfg.jam_mode = JamMode::Deterministic;
    let opts = EpisodeOptions {
        ticks: Some(horizon),
        ..Default::default()
    };
    let log = simulate(state, &cfg, 0, "rollout", &opts, |s, t| {
        let action = if t == 0 {
            action.clone()
        } else {
            continuation.decide(s, &cfg)?.action
        };
        Ok(Decided {
            action,
            events: Vec::new(),
        })
    })?;
    Ok(log.total_reward())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Proposal source id, or `"human"` for pairs recorded from a manager.
    pub source: String,
    pub iteration: u32,
    pub seed: u64,
    pub state_index: usize,
    pub pair_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub state_text: String,
    pub state_json: serde_json::Value,
    pub chosen: Action,
    pub rejected: Action,
    pub score_chosen: f64,
    pub score_rejected: f64,
    pub horizon: u32,
    pub continuation_policy: String,
    pub margin: f64,
    pub provenance: Provenance,
}

/// Produces candidate actions for a state. The empty action is added by the
/// generator, so sources only need to supply alternatives to it.
pub trait ProposalSource: Send + Sync {
    fn id(&self) -> String;

    fn propose(&self, state: &SystemState, config: &SimConfig, state_index: usize, seed: u64) -> Result<Vec<Action>>;
}

/// Each policy's decision, optionally the best single heuristic move, and a
/// number of uniformly random single moves.
#[derive(Clone)]
pub struct PolicyProposals {
    pub policies: Vec<Arc<dyn Policy>>,
    pub include_best_single: bool,
    pub random_moves: usize,
}

impl PolicyProposals {
    pub fn new(policies: Vec<Arc<dyn Policy>>) -> Self {
        Self {
            policies,
            include_best_single: false,
            random_moves: 0,
        }
    }

    pub fn with_perturbations(mut self, random_moves: usize) -> Self {
        self.include_best_single = true;
        self.random_moves = random_moves;
        self
    }
}

impl ProposalSource for PolicyProposals {
    fn id(&self) -> String {
        let mut parts: Vec<String> = self.policies.iter().map(|p| p.id()).collect();
        if self.include_best_single {
            parts.push("best_single_move".into());
        }
        if self.random_moves > 0 {
            parts.push(format!("random_moves({})", self.random_moves));
        }
        parts.join("+")
    }

    fn propose(&self, state: &SystemState, config: &SimConfig, state_index: usize, seed: u64) -> Result<Vec<Action>> {
        let mut out = Vec::new();
        for p in &self.policies {
            out.push(p.decide(state, config)?.action);
        }
        if self.include_best_single {
            out.extend(best_single_move(state, config));
        }
        let mut rng = seed::rng(seed::derive(seed, "proposals", state_index as u64));
        for _ in 0..self.random_moves {
            out.push(random_valid_move(state, config, &mut rng));
        }
        Ok(out)
    }
}

/// Explicit candidate lists per state index.
#[derive(Debug, Clone)]
pub struct FixedProposals {
    pub name: String,
    pub candidates: Vec<Vec<Action>>,
}

impl ProposalSource for FixedProposals {
    fn id(&self) -> String {
        self.name.clone()
    }

    fn propose(&self, _: &SystemState, _: &SimConfig, state_index: usize, _: u64) -> Result<Vec<Action>> {
        Ok(self.candidates.get(state_index).cloned().unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrefParams {
    pub horizon: u32,
    pub margin: f64,
    pub continuation: Continuation,
    pub iteration: u32,
    pub seed: u64,
}

impl Default for PrefParams {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            margin: DEFAULT_MARGIN,
            continuation: Continuation::NoReallocation,
            iteration: 0,
            seed: 0,
        }
    }
}

/// A state to label, with the config it lives in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefState {
    pub state: SystemState,
    pub config: SimConfig,
}

/// Every `stride`-th pre-decision state of each log, in log order.
pub fn states_from_logs(logs: &[ShiftLog], stride: usize) -> Vec<PrefState> {
    let stride = stride.max(1);
    logs.iter()
        .flat_map(|l| {
            l.states[..l.records.len()].iter().step_by(stride).map(|s| PrefState {
                state: s.clone(),
                config: l.config.clone(),
            })
        })
        .collect()
}

/// A candidate dropped before rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedCandidate {
    pub state_index: usize,
    pub action: Action,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub kind: String,
    pub schema_version: u32,
    pub task: String,
    pub source: String,
    pub params: PrefParams,
    pub n_states: usize,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    pub header: DatasetHeader,
    pub pairs: Vec<PreferencePair>,
    pub dropped: Vec<DroppedCandidate>,
}

impl PreferenceDataset {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for p in &self.pairs {
            serde_json::to_writer(&mut out, p)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Data("empty preference dataset".into()))??;
        let header: DatasetHeader = serde_json::from_str(&header_line)?;
        if header.kind != "header" {
            return Err(Error::Data("preference dataset must start with a header record".into()));
        }
        let mut pairs = Vec::new();
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                pairs.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self {
            header,
            pairs,
            dropped: Vec::new(),
        })
    }
}

/// Deduplicated, validated candidate set; the empty action is always present.
fn candidates(
    state: &SystemState,
    config: &SimConfig,
    proposed: Vec<Action>,
    idx: usize,
) -> (Vec<Action>, Vec<DroppedCandidate>) {
    let mut out: Vec<Action> = Vec::new();
    let mut dropped = Vec::new();
    for a in proposed.into_iter().chain(std::iter::once(Action::noop())) {
        let violations = validate_action(state, &a, config);
        if !violations.is_empty() {
            dropped.push(DroppedCandidate {
                state_index: idx,
                action: a,
                violations,
            });
            continue;
        }
        let a = a.effective(state).canonical();
        if !out.contains(&a) {
            out.push(a);
        }
    }
    (out, dropped)
}

/// Labels every pair of distinct candidates per state by rollout score.
/// Pairs whose scores differ by less than `margin` (or not at all) are
/// dropped. Output is ordered by (state index, pair index).
pub fn generate_preferences(
    states: &[PrefState],
    source: &dyn ProposalSource,
    params: &PrefParams,
) -> Result<PreferenceDataset> {
    let continuation = params.continuation.policy();
    let cont_id = continuation.id();
    let per_state: Vec<(Vec<PreferencePair>, Vec<DroppedCandidate>)> = states
        .par_iter()
        .enumerate()
        .map(|(si, ps)| {
            let proposed = source.propose(&ps.state, &ps.config, si, params.seed)?;
            let (cands, dropped) = candidates(&ps.state, &ps.config, proposed, si);
            let scores = cands
                .iter()
                .map(|a| rollout_score(&ps.state, &ps.config, a, params.horizon, continuation.as_ref()))
                .collect::<Result<Vec<f64>>>()?;
            let state_text = serialize_state(&ps.state, &ps.config);
            let state_json = serde_json::to_value(&ps.state)?;
            let mut pairs = Vec::new();
            let mut pair_index = 0;
            for i in 0..cands.len() {
                for j in i + 1..cands.len() {
                    let k = pair_index;
                    pair_index += 1;
                    let margin = (scores[i] - scores[j]).abs();
                    if margin < params.margin || margin == 0.0 {
                        continue;
                    }
                    let (c, r) = if scores[i] > scores[j] { (i, j) } else { (j, i) };
                    pairs.push(PreferencePair {
                        state_text: state_text.clone(),
                        state_json: state_json.clone(),
                        chosen: cands[c].clone(),
                        rejected: cands[r].clone(),
                        score_chosen: scores[c],
                        score_rejected: scores[r],
                        horizon: params.horizon,
                        continuation_policy: cont_id.clone(),
                        margin: scores[c] - scores[r],
                        provenance: Provenance {
                            source: source.id(),
                            iteration: params.iteration,
                            seed: params.seed,
                            state_index: si,
                            pair_index: k,
                            rationale: None,
                        },
                    });
                }
            }
            Ok((pairs, dropped))
        })
        .collect::<Result<_>>()?;

    let mut pairs = Vec::new();
    let mut dropped = Vec::new();
    for (p, d) in per_state {
        pairs.extend(p);
        dropped.extend(d);
    }
    for d in &dropped {
        log::info!(
            "state {}: dropped invalid candidate {}",
            d.state_index,
            d.action.to_json()
        );
    }
    Ok(PreferenceDataset {
        header: DatasetHeader {
            kind: "header".into(),
            schema_version: DATASET_SCHEMA_VERSION,
            task: DEFAULT_TASK.into(),
            source: source.id(),
            params: params.clone(),
            n_states: states.len(),
            n_pairs: pairs.len(),
        },
        pairs,
        dropped,
    })
}

/// Regenerates preference data for `rounds` rounds over fixed states and
/// rollout parameters; `source_for_round` supplies the (possibly updated)
/// proposal source for each round. Round `r` is tagged `iteration = r`.
pub fn iterate_preferences<F>(
    states: &[PrefState],
    mut source_for_round: F,
    rounds: u32,
    params: &PrefParams,
) -> Result<Vec<PreferenceDataset>>
where
    F: FnMut(u32) -> Result<Box<dyn ProposalSource>>,
{
    (0..rounds)
        .map(|r| {
            let source = source_for_round(r)?;
            let p = PrefParams {
                iteration: r,
                ..params.clone()
            };
            generate_preferences(states, source.as_ref(), &p)
        })
        .collect()
}

/// File name of dataset version `round`.
pub fn dataset_file_name(round: u32) -> String {
    format!("preferences_v{:03}.jsonl", round + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_scenario, Move, ScenarioParams, Station};

    fn states(n: u64) -> Vec<PrefState> {
        (0..n)
            .map(|s| {
                let (config, state) = generate_scenario(&SimConfig::default(), &ScenarioParams::default(), s);
                PrefState { state, config }
            })
            .collect()
    }

    fn mixed() -> PolicyProposals {
        PolicyProposals::new(vec![Arc::new(GreedyBottleneck::default())]).with_perturbations(3)
    }

    #[test]
    fn every_pair_clears_the_margin_and_is_valid() {
        let s = states(8);
        let ds = generate_preferences(&s, &mixed(), &PrefParams::default()).unwrap();
        assert!(!ds.pairs.is_empty());
        for p in &ds.pairs {
            assert!(p.score_chosen >= p.score_rejected + DEFAULT_MARGIN);
            assert_eq!(p.margin, p.score_chosen - p.score_rejected);
            let st = &s[p.provenance.state_index];
            assert!(validate_action(&st.state, &p.chosen, &st.config).is_empty());
            assert!(validate_action(&st.state, &p.rejected, &st.config).is_empty());
        }
        let keys: Vec<(usize, usize)> = ds
            .pairs
            .iter()
            .map(|p| (p.provenance.state_index, p.provenance.pair_index))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn labeling_rule_and_margin() {
        let s = states(1);
        let st = &s[0];
        let w = st.state.assignment.keys().next().unwrap().clone();
        let from = st.state.assignment[&w].unwrap();
        let staffing = st.state.staffing();
        let to = (0..st.config.n_lines)
            .flat_map(|l| (0..3).map(move |g| Station::new(l, g)))
            .find(|x| *x != from && staffing[x.line][x.stage] < st.config.slot_capacity[x.stage])
            .unwrap();
        let a = Action::new(vec![Move { worker_id: w, to }]);
        let cont = NoReallocation;
        let sa = rollout_score(&st.state, &st.config, &a, 6, &cont).unwrap();
        let s0 = rollout_score(&st.state, &st.config, &Action::noop(), 6, &cont).unwrap();
        let fixed = FixedProposals {
            name: "fixed".into(),
            candidates: vec![vec![a.clone()]],
        };
        let strict = PrefParams {
            margin: (sa - s0).abs() + 1e-9,
            ..Default::default()
        };
        assert!(generate_preferences(&s, &fixed, &strict).unwrap().pairs.is_empty());
        let loose = PrefParams {
            margin: 0.0,
            ..Default::default()
        };
        let ds = generate_preferences(&s, &fixed, &loose).unwrap();
        if sa != s0 {
            let p = &ds.pairs[0];
            let better = if sa > s0 { &a } else { &Action::noop() };
            assert_eq!(&p.chosen, better);
            assert_eq!(p.margin, (sa - s0).abs());
        }
    }

    #[test]
    fn invalid_candidates_are_dropped() {
        let s = states(1);
        let bogus = Action::new(vec![Move::new("nobody", Station::new(0, 0))]);
        let fixed = FixedProposals {
            name: "fixed".into(),
            candidates: vec![vec![bogus]],
        };
        let ds = generate_preferences(&s, &fixed, &PrefParams::default()).unwrap();
        assert_eq!(ds.dropped.len(), 1);
        assert!(ds.pairs.is_empty());
    }

    #[test]
    fn rounds_are_deterministic_and_versioned() {
        let s = states(4);
        let params = PrefParams {
            seed: 11,
            ..Default::default()
        };
        let single = generate_preferences(&s, &mixed(), &params).unwrap();
        let one = iterate_preferences(&s, |_| Ok(Box::new(mixed()) as Box<dyn ProposalSource>), 1, &params).unwrap();
        assert_eq!(one[0].pairs, single.pairs);
        let two = iterate_preferences(&s, |_| Ok(Box::new(mixed()) as Box<dyn ProposalSource>), 2, &params).unwrap();
        let strip = |d: &PreferenceDataset| {
            d.pairs
                .iter()
                .map(|p| (p.chosen.clone(), p.rejected.clone(), p.score_chosen))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&two[0]), strip(&two[1]));
        assert_eq!(two[1].pairs[0].provenance.iteration, 1);
        assert_eq!(dataset_file_name(1), "preferences_v002.jsonl");
    }

    #[test]
    fn jsonl_round_trip() {
        let s = states(3);
        let ds = generate_preferences(&s, &mixed(), &PrefParams::default()).unwrap();
        let text = ds.to_jsonl();
        let back = PreferenceDataset::read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(back.header, ds.header);
        assert_eq!(back.pairs, ds.pairs);
        assert!(text
            .lines()
            .next()
            .unwrap()
            .contains(DEFAULT_TASK.split('.').next().unwrap()));
    }
}
