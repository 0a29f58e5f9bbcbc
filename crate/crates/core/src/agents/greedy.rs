use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Policy, PolicyDecision};
use crate::error::Result;
use crate::sim::{estimate_station_flow, Action, Move, SimConfig, Station, SystemState, WorkerId, N_STAGES};

/// Myopic rebalancing: estimate each station's one-tick flow with one more
/// and one fewer productive worker at the current buffer levels, then move
/// workers from the cheapest source to the most valuable destination.
///
/// A move from `src` to `dst` scores `gain(dst) - (1 + cooldown) * loss(src) -
/// min_net_gain`; the extra `cooldown * loss` term charges for the ticks the
/// mover spends walking. Moves are taken while the best score is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GreedyBottleneck {
    pub max_moves_per_tick: usize,
    pub min_net_gain: f64,
}

impl Default for GreedyBottleneck {
    fn default() -> Self {
        Self {
            max_moves_per_tick: 2,
            min_net_gain: 0.5,
        }
    }
}

struct Candidate {
    score: f64,
    src: Station,
    dst: Station,
}

impl GreedyBottleneck {
    pub fn new(max_moves_per_tick: usize) -> Self {
        Self {
            max_moves_per_tick,
            ..Self::default()
        }
    }

    fn plan(&self, state: &SystemState, config: &SimConfig, limit: usize, require_positive: bool) -> Vec<Move> {
        let n = config.n_lines;
        let active_lines = state.active_lines();
        let staffing = state.staffing();
        let mut planned = state.active_staffing();
        let mut vacancy: Vec<[usize; N_STAGES]> = staffing
            .iter()
            .map(|row| std::array::from_fn(|s| config.slot_capacity[s].saturating_sub(row[s])))
            .collect();
        let mut moved: BTreeSet<WorkerId> = BTreeSet::new();
        let stations: Vec<Station> = (0..n)
            .flat_map(|l| (0..N_STAGES).map(move |s| Station::new(l, s)))
            .collect();
        let cost_factor = 1.0 + config.cooldown as f64;
        let mut moves = Vec::new();

        for _ in 0..limit {
            let movable = |st: Station, moved: &BTreeSet<WorkerId>| -> Option<WorkerId> {
                state
                    .workers_at(st)
                    .into_iter()
                    .rev()
                    .find(|w| state.cooldown(w) == 0 && !moved.contains(*w))
                    .cloned()
            };
            let est = |st: Station, k: usize| estimate_station_flow(state, config, &active_lines, st.line, st.stage, k);

            let mut best: Option<Candidate> = None;
            for &dst in &stations {
                if vacancy[dst.line][dst.stage] == 0 {
                    continue;
                }
                let k = planned[dst.line][dst.stage];
                let gain = est(dst, k + 1) - est(dst, k);
                for &src in &stations {
                    let k_src = planned[src.line][src.stage];
                    if src == dst || k_src == 0 || movable(src, &moved).is_none() {
                        continue;
                    }
                    let loss = est(src, k_src) - est(src, k_src - 1);
                    let score = gain - cost_factor * loss - self.min_net_gain;
                    if best.as_ref().is_none_or(|b| score > b.score) {
                        best = Some(Candidate { score, src, dst });
                    }
                }
            }
            let Some(c) = best else { break };
            if require_positive && c.score <= 0.0 {
                break;
            }
            let worker = movable(c.src, &moved).expect("checked when scoring");
            moved.insert(worker.clone());
            planned[c.src.line][c.src.stage] -= 1;
            planned[c.dst.line][c.dst.stage] += 1;
            vacancy[c.dst.line][c.dst.stage] -= 1;
            moves.push(Move {
                worker_id: worker,
                to: c.dst,
            });
        }
        moves
    }

    pub fn propose(&self, state: &SystemState, config: &SimConfig) -> Action {
        Action::new(self.plan(state, config, self.max_moves_per_tick, true))
    }
}

/// The highest-scoring single move even when it does not clear the threshold.
/// `None` only when no worker can move anywhere.
pub fn best_single_move(state: &SystemState, config: &SimConfig) -> Option<Action> {
    let moves = GreedyBottleneck::default().plan(state, config, 1, false);
    (!moves.is_empty()).then(|| Action::new(moves))
}

impl Policy for GreedyBottleneck {
    fn id(&self) -> String {
        "greedy_bottleneck".into()
    }

    fn decide(&self, state: &SystemState, config: &SimConfig) -> Result<PolicyDecision> {
        Ok(PolicyDecision::from_action(self.propose(state, config)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_scenario, validate_action, ScenarioParams, B_12, B_23, B_IN};

    fn single_line(placed: &[(usize, usize)]) -> (SimConfig, SystemState) {
        let mut c = SimConfig::with_lines(1);
        c.cooldown = 1;
        let ids = crate::sim::scenario::worker_ids(placed.iter().map(|p| p.1).sum());
        let mut s = SystemState::empty(&c, ids.iter().cloned());
        let mut it = ids.into_iter();
        for (stage, count) in placed {
            for _ in 0..*count {
                s.assignment.insert(it.next().unwrap(), Some(Station::new(0, *stage)));
            }
        }
        (c, s)
    }

    /// Independent flow oracle: min(workers * rate * throttle, upstream, free).
    fn oracle_flow(c: &SimConfig, s: &SystemState, stage: usize, workers: usize) -> f64 {
        let up = s.buffers[0][stage];
        let cap = c.buffer_capacity[0][stage + 1];
        let lvl = s.buffers[0][stage + 1];
        let fill = lvl / cap;
        let thr = if fill <= c.throttle_knee {
            1.0
        } else {
            1.0 - (fill - c.throttle_knee) / (1.0 - c.throttle_knee) * (1.0 - c.throttle_floor)
        };
        (workers as f64 * c.base_rate[stage] * thr).min(up).min(cap - lvl)
    }

    #[test]
    fn balanced_system_stays_put() {
        // Every stage supply-limited with plenty of headroom: all marginal gains zero.
        let (c, mut s) = single_line(&[(0, 2), (1, 3), (2, 1)]);
        s.buffers[0] = [0.0, 0.0, 0.0, 0.0];
        assert!(GreedyBottleneck::default().propose(&s, &c).is_empty());
    }

    #[test]
    fn blocked_stage_one_feeds_starved_stage_two() {
        // Stage 1: 4 workers behind a nearly full B_12. Stage 2: 1 worker with a
        // deep B_12 to draw from. Stage 3 has ample staff.
        let (c, mut s) = single_line(&[(0, 4), (1, 1), (2, 2)]);
        s.buffers[0][B_IN] = 100.0;
        s.buffers[0][B_12] = 58.0;
        s.buffers[0][B_23] = 20.0;

        // Oracle: net value of every (src, dst) single move.
        let counts = [4usize, 1, 2];
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for src in 0..3 {
            for dst in 0..3 {
                if src == dst || counts[dst] == c.slot_capacity[dst] {
                    continue;
                }
                let gain = oracle_flow(&c, &s, dst, counts[dst] + 1) - oracle_flow(&c, &s, dst, counts[dst]);
                let loss = oracle_flow(&c, &s, src, counts[src]) - oracle_flow(&c, &s, src, counts[src] - 1);
                let net = gain - 2.0 * loss - 0.5;
                if net > best.0 {
                    best = (net, src, dst);
                }
            }
        }
        assert_eq!((best.1, best.2), (0, 1));
        assert!(best.0 > 0.0);

        let a = GreedyBottleneck::new(1).propose(&s, &c);
        assert_eq!(a.moves.len(), 1);
        assert_eq!(s.assignment[&a.moves[0].worker_id], Some(Station::new(0, 0)));
        assert_eq!(a.moves[0].to, Station::new(0, 1));
    }

    #[test]
    fn gain_below_cooldown_cost_means_no_move() {
        // Stage 2 could use another worker, but every candidate source is
        // productive enough that moving costs more than it gains.
        let (mut c, mut s) = single_line(&[(0, 4), (1, 5), (2, 2)]);
        c.cooldown = 3;
        s.buffers[0] = [100.0, 40.0, 14.0, 0.0];
        assert!(GreedyBottleneck::default().propose(&s, &c).is_empty());
    }

    #[test]
    fn never_exceeds_move_budget_and_stays_valid() {
        for seed in 0..300 {
            let (c, s) = generate_scenario(&SimConfig::default(), &ScenarioParams::default(), seed);
            for budget in [0, 1, 2, 3] {
                let a = GreedyBottleneck::new(budget).propose(&s, &c);
                assert!(a.moves.len() <= budget);
                assert!(validate_action(&s, &a, &c).is_empty());
            }
        }
    }
}
