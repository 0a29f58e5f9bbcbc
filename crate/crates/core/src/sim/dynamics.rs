//! One five-minute tick of the fluid flow model.
//!
//! Each stage moves `min(capacity, upstream level, downstream free space)`
//! units, where capacity is `active workers * base rate * throttle(downstream
//! fill) * jam multiplier`. Stages are processed downstream first (3, 2, 1), so
//! a unit produced by stage `s` cannot be consumed by stage `s + 1` in the same
//! tick.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::action::{validate_action, Action, Violation};
use super::config::{JamMode, SimConfig, B_IN, B_OUT, N_STAGES};
use super::state::SystemState;
use crate::error::{Error, Result};
use crate::seed;

/// Piecewise-linear slowdown from downstream fill: 1 up to the knee, then
/// linear down to the floor at a full buffer. Out-of-range fill is clamped.
pub fn throttle(fill: f64, config: &SimConfig) -> f64 {
    let fill = if fill.is_nan() { 0.0 } else { fill.clamp(0.0, 1.0) };
    let knee = config.throttle_knee;
    if fill <= knee {
        return 1.0;
    }
    let frac = (fill - knee) / (1.0 - knee);
    1.0 - frac * (1.0 - config.throttle_floor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    JamOnset {
        line: usize,
    },
    JamCleared {
        line: usize,
    },
    /// Arrivals that did not fit into `b_in` this tick and joined the backlog.
    Overflow {
        line: usize,
        units: f64,
    },
    ActionRejected {
        violations: Vec<Violation>,
    },
    PolicyError {
        kind: PolicyErrorKind,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyErrorKind {
    Timeout,
    Transport,
    MalformedReply,
    InvalidAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub next_state: SystemState,
    /// Stage-3 completions entering `b_out` this tick.
    pub reward: f64,
    /// `per_stage_flow[line][stage]`.
    pub per_stage_flow: Vec<[f64; N_STAGES]>,
    pub events: Vec<Event>,
}

fn fill_and_free(level: f64, capacity: f64) -> (f64, f64) {
    if capacity <= 0.0 {
        (1.0, 0.0)
    } else {
        ((level / capacity).clamp(0.0, 1.0), (capacity - level).max(0.0))
    }
}

/// Stage-1 jam multiplier for `line`; other stages are never jammed.
pub fn jam_multiplier(state: &SystemState, config: &SimConfig, active_lines: &[bool], line: usize) -> f64 {
    match config.jam_mode {
        JamMode::Deterministic => {
            let left = line > 0 && active_lines[line - 1];
            let right = line + 1 < active_lines.len() && active_lines[line + 1];
            if left || right {
                (1.0 - config.jam_coupling).max(0.0)
            } else {
                1.0
            }
        }
        JamMode::Stochastic => {
            if state.jam_remaining[line] > 0 {
                0.0
            } else {
                1.0
            }
        }
    }
}

/// Flow of one station given buffer levels and a number of active workers.
pub fn station_flow(
    buffers: &[f64; 4],
    capacities: &[f64; 4],
    stage: usize,
    active_workers: f64,
    jam_mult: f64,
    config: &SimConfig,
) -> f64 {
    let upstream = buffers[stage];
    let (fill, free) = fill_and_free(buffers[stage + 1], capacities[stage + 1]);
    let capacity = active_workers * config.base_rate[stage] * throttle(fill, config) * jam_mult;
    capacity.min(upstream).min(free).max(0.0)
}

/// One-tick flow estimate for a station at the current buffer levels with
/// `active_workers` productive workers. Used by lookahead heuristics.
pub fn estimate_station_flow(
    state: &SystemState,
    config: &SimConfig,
    active_lines: &[bool],
    line: usize,
    stage: usize,
    active_workers: usize,
) -> f64 {
    let jam = if stage == 0 {
        jam_multiplier(state, config, active_lines, line)
    } else {
        1.0
    };
    station_flow(
        &state.buffers[line],
        &config.buffer_capacity[line],
        stage,
        active_workers as f64,
        jam,
        config,
    )
}

/// Advances the system one tick. `rng_seed` is required in stochastic jam mode
/// and ignored otherwise.
pub fn step(state: &SystemState, action: &Action, config: &SimConfig, rng_seed: Option<u64>) -> Result<StepResult> {
    let violations = validate_action(state, action, config);
    if !violations.is_empty() {
        return Err(Error::InvalidAction(violations));
    }
    if config.jam_mode == JamMode::Stochastic && rng_seed.is_none() {
        return Err(Error::MissingSeed);
    }

    let n = config.n_lines;
    let mut next = state.clone();
    let mut events = Vec::new();

    // (1) moves
    for m in &action.moves {
        let current = next.assignment.get(&m.worker_id).copied().flatten();
        if current == Some(m.to) {
            continue;
        }
        next.assignment.insert(m.worker_id.clone(), Some(m.to));
        next.cooldown_remaining.insert(m.worker_id.clone(), config.cooldown);
    }
    let active_lines = next.active_lines();

    // (2) jams
    for line in 0..n {
        if next.jam_remaining[line] > 0 {
            next.jam_remaining[line] -= 1;
            if next.jam_remaining[line] == 0 {
                events.push(Event::JamCleared { line });
            }
        }
    }
    if config.jam_mode == JamMode::Stochastic {
        let mut rng = seed::rng(rng_seed.expect("checked above"));
        let full_stage1 = config.slot_capacity[0] as f64 * config.base_rate[0];
        let util = |line: usize| {
            if full_stage1 > 0.0 {
                (state.last_tick_throughput[0][line] / full_stage1).clamp(0.0, 1.0)
            } else {
                0.0
            }
        };
        for line in 0..n.saturating_sub(1) {
            if !(active_lines[line] && active_lines[line + 1]) {
                continue;
            }
            let p = (config.jam_hazard_scale * util(line) * util(line + 1)).clamp(0.0, 1.0);
            if rng.gen::<f64>() < p {
                for l in [line, line + 1] {
                    if next.jam_remaining[l] == 0 {
                        events.push(Event::JamOnset { line: l });
                    }
                    next.jam_remaining[l] = next.jam_remaining[l].max(config.jam_duration);
                }
            }
        }
    }

    // (3) stages, downstream first
    let active = next.active_staffing();
    let mut flows = vec![[0.0; N_STAGES]; n];
    for stage in (0..N_STAGES).rev() {
        for line in 0..n {
            let jam = if stage == 0 {
                jam_multiplier(&next, config, &active_lines, line)
            } else {
                1.0
            };
            let caps = config.buffer_capacity[line];
            let buf = &mut next.buffers[line];
            let flow = station_flow(buf, &caps, stage, active[line][stage] as f64, jam, config);
            buf[stage] = (buf[stage] - flow).max(0.0);
            buf[stage + 1] = (buf[stage + 1] + flow).min(caps[stage + 1]);
            flows[line][stage] = flow;
        }
    }

    // (4) dispatch
    for line in 0..n {
        let buf = &mut next.buffers[line];
        let drained = config.dispatch_rate.min(buf[B_OUT]);
        buf[B_OUT] -= drained;
        next.cumulative_output += drained;
    }

    // (5) arrivals, overflow into the external backlog
    for line in 0..n {
        let arriving = config.arrival_rate[line];
        let pending = next.external_backlog[line] + arriving;
        let free = (config.buffer_capacity[line][B_IN] - next.buffers[line][B_IN]).max(0.0);
        let admitted = pending.min(free);
        next.buffers[line][B_IN] += admitted;
        next.external_backlog[line] = pending - admitted;
        next.cumulative_arrivals += arriving;
        if pending > admitted {
            events.push(Event::Overflow {
                line,
                units: pending - admitted,
            });
        }
    }

    // (6) cooldowns and clock
    for cd in next.cooldown_remaining.values_mut() {
        *cd = cd.saturating_sub(1);
    }
    for (stage, per_line) in next.last_tick_throughput.iter_mut().enumerate() {
        for line in 0..n {
            per_line[line] = flows[line][stage];
        }
    }
    next.tick += 1;

    let reward = flows.iter().map(|f| f[N_STAGES - 1]).sum();
    Ok(StepResult {
        next_state: next,
        reward,
        per_stage_flow: flows,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Move, Station, WorkerId, B_12, B_23};

    fn one_line() -> SimConfig {
        let mut c = SimConfig::with_lines(1);
        c.arrival_rate = vec![0.0];
        c
    }

    fn place(state: &mut SystemState, who: &str, line: usize, stage: usize) {
        state
            .assignment
            .insert(WorkerId::from(who), Some(Station::new(line, stage)));
        state.cooldown_remaining.insert(WorkerId::from(who), 0);
    }

    #[test]
    fn throttle_examples() {
        let c = SimConfig::default();
        assert_eq!(throttle(0.0, &c), 1.0);
        assert_eq!(throttle(0.7, &c), 1.0);
        assert!((throttle(1.0, &c) - 0.2).abs() < 1e-15);
        // 1 - (0.15 / 0.3) * 0.8
        assert!((throttle(0.85, &c) - 0.6).abs() < 1e-12);
        assert_eq!(throttle(-3.0, &c), 1.0);
        assert!((throttle(7.0, &c) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn no_workers_only_arrivals_and_dispatch_move_units() {
        let mut c = SimConfig::with_lines(2);
        c.arrival_rate = vec![5.0, 7.0];
        let mut s = SystemState::empty(&c, []);
        s.buffers[0] = [10.0, 20.0, 30.0, 50.0];
        s.buffers[1] = [0.0, 0.0, 0.0, 10.0];
        let s = s.with_balanced_accounting();
        let r = step(&s, &Action::noop(), &c, None).unwrap();
        assert_eq!(r.reward, 0.0);
        assert_eq!(r.next_state.buffers[0], [15.0, 20.0, 30.0, 20.0]);
        assert_eq!(r.next_state.buffers[1], [7.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn full_downstream_buffer_blocks_stage() {
        let c = one_line();
        let mut s = SystemState::empty(&c, []);
        for (i, w) in ["a", "b", "c", "d"].iter().enumerate() {
            place(&mut s, w, 0, 1);
            let _ = i;
        }
        s.buffers[0][B_12] = 50.0;
        s.buffers[0][B_23] = 40.0;
        let r = step(&s.with_balanced_accounting(), &Action::noop(), &c, None).unwrap();
        assert_eq!(r.per_stage_flow[0][1], 0.0);
    }

    #[test]
    fn stage_one_flow_example() {
        // 3 workers * 6 units, B_in = 100, B_12 at 20 % fill, no neighbours.
        let c = one_line();
        let mut s = SystemState::empty(&c, []);
        for w in ["a", "b", "c"] {
            place(&mut s, w, 0, 0);
        }
        s.buffers[0][B_IN] = 100.0;
        s.buffers[0][B_12] = 12.0;
        let r = step(&s.with_balanced_accounting(), &Action::noop(), &c, None).unwrap();
        assert_eq!(r.per_stage_flow[0][0], 18.0);
    }

    #[test]
    fn adjacent_active_line_penalises_stage_one() {
        let mut c = SimConfig::with_lines(2);
        c.arrival_rate = vec![0.0, 0.0];
        let mut s = SystemState::empty(&c, []);
        place(&mut s, "a", 0, 0);
        place(&mut s, "b", 1, 2);
        s.buffers[0][B_IN] = 100.0;
        let r = step(&s.with_balanced_accounting(), &Action::noop(), &c, None).unwrap();
        assert!((r.per_stage_flow[0][0] - 6.0 * 0.85).abs() < 1e-12);
    }

    #[test]
    fn moved_worker_is_idle_for_cooldown_ticks() {
        let mut c = one_line();
        c.cooldown = 2;
        let mut s = SystemState::empty(&c, []);
        place(&mut s, "a", 0, 1);
        s.buffers[0][B_IN] = 100.0;
        let s = s.with_balanced_accounting();
        let a = Action::new(vec![Move::new("a", Station::new(0, 0))]);
        let r0 = step(&s, &a, &c, None).unwrap();
        assert_eq!(r0.per_stage_flow[0][0], 0.0);
        let r1 = step(&r0.next_state, &Action::noop(), &c, None).unwrap();
        assert_eq!(r1.per_stage_flow[0][0], 0.0);
        let r2 = step(&r1.next_state, &Action::noop(), &c, None).unwrap();
        assert_eq!(r2.per_stage_flow[0][0], 6.0);
    }

    #[test]
    fn overflow_goes_to_backlog_and_reenters() {
        let mut c = one_line();
        c.arrival_rate = vec![30.0];
        let mut s = SystemState::empty(&c, []);
        s.buffers[0][B_IN] = 100.0;
        let r = step(&s.with_balanced_accounting(), &Action::noop(), &c, None).unwrap();
        assert_eq!(r.next_state.buffers[0][B_IN], 120.0);
        assert_eq!(r.next_state.external_backlog[0], 10.0);
        assert!(matches!(r.events[0], Event::Overflow { line: 0, .. }));
        assert!(r.next_state.conservation_residual().abs() < 1e-9);
    }

    #[test]
    fn stochastic_mode_needs_seed_and_halts_jammed_lines() {
        let mut c = SimConfig::with_lines(2);
        c.jam_mode = JamMode::Stochastic;
        c.jam_hazard_scale = 1.0;
        c.jam_duration = 2;
        let mut s = SystemState::empty(&c, []);
        for (w, l) in [
            ("a", 0),
            ("b", 0),
            ("c", 0),
            ("d", 0),
            ("e", 1),
            ("f", 1),
            ("g", 1),
            ("h", 1),
        ] {
            place(&mut s, w, l, 0);
        }
        s.buffers = vec![[100.0, 0.0, 0.0, 0.0]; 2];
        s.last_tick_throughput[0] = vec![24.0, 24.0];
        let s = s.with_balanced_accounting();
        assert!(matches!(step(&s, &Action::noop(), &c, None), Err(Error::MissingSeed)));

        let r = step(&s, &Action::noop(), &c, Some(1)).unwrap();
        assert_eq!(r.per_stage_flow[0][0], 0.0);
        assert_eq!(r.next_state.jam_remaining, vec![2, 2]);
        // Second tick: still jammed (timer 2 -> 1), utilisation is now 0 so no new jam.
        let r = step(&r.next_state, &Action::noop(), &c, Some(2)).unwrap();
        assert_eq!(r.per_stage_flow[1][0], 0.0);
        let r = step(&r.next_state, &Action::noop(), &c, Some(3)).unwrap();
        assert!(r.events.contains(&Event::JamCleared { line: 0 }));
        assert_eq!(r.per_stage_flow[0][0], 24.0);
    }

    #[test]
    fn invalid_action_is_rejected() {
        let c = one_line();
        let s = SystemState::empty(&c, []);
        let a = Action::new(vec![Move::new("ghost", Station::new(0, 0))]);
        assert!(matches!(step(&s, &a, &c, None), Err(Error::InvalidAction(_))));
    }
}
