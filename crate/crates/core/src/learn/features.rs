//! Fixed feature engineering for staffing positions and global state.
//!
//! A position is one worker slot: `(line, stage, k)` for `k < slot_capacity[stage]`.
//! Slot `k` of a station holds the station's `k`-th worker in ascending id
//! order; the remaining slots are vacant.

use crate::sim::{estimate_station_flow, SimConfig, Station, SystemState, WorkerId, N_STAGES};

pub const FEATURE_DIM: usize = 16;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "occupied",
    "stage_1",
    "stage_2",
    "stage_3",
    "line_active",
    "upstream_fill",
    "downstream_fill",
    "stage_throughput",
    "cooling_down",
    "tick_fraction",
    "bias",
    "last_occupied",
    "first_vacant",
    "marginal_gain",
    "marginal_loss",
    "staffing_fraction",
];

/// Stations and slot indices in position order (line, stage, slot).
pub fn position_layout(config: &SimConfig) -> Vec<(Station, usize)> {
    let mut out = Vec::with_capacity(config.total_slots());
    for line in 0..config.n_lines {
        for stage in 0..N_STAGES {
            for k in 0..config.slot_capacity[stage] {
                out.push((Station::new(line, stage), k));
            }
        }
    }
    out
}

/// Row-major `n_positions x FEATURE_DIM` features plus the bookkeeping the
/// policy needs to enumerate destinations.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionFeatures {
    pub data: Vec<f64>,
    /// Station index (`line * 3 + stage`) of every position.
    pub station: Vec<u32>,
    /// `(position, worker)` for occupied positions in position order.
    pub occupied: Vec<(usize, WorkerId)>,
    /// Vacant positions in position order.
    pub vacant: Vec<usize>,
}

impl PositionFeatures {
    pub fn n_positions(&self) -> usize {
        self.station.len()
    }

    pub fn row(&self, p: usize) -> &[f64] {
        &self.data[p * FEATURE_DIM..(p + 1) * FEATURE_DIM]
    }

    pub fn station_of(&self, p: usize) -> Station {
        let s = self.station[p] as usize;
        Station::new(s / N_STAGES, s % N_STAGES)
    }

    /// Valid destinations for occupied position `p`: itself (stay) first, then
    /// every vacant slot at a different station.
    pub fn destinations(&self, p: usize) -> impl Iterator<Item = usize> + '_ {
        let own = self.station[p];
        std::iter::once(p).chain(self.vacant.iter().copied().filter(move |&v| self.station[v] != own))
    }
}

fn max_rate(config: &SimConfig) -> f64 {
    config
        .base_rate
        .iter()
        .cloned()
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE)
}

pub fn featurize(state: &SystemState, config: &SimConfig) -> PositionFeatures {
    let layout = position_layout(config);
    let active_lines = state.active_lines();
    let staffing = state.staffing();
    let active = state.active_staffing();
    let norm = max_rate(config);
    let horizon = config.episode_length.max(1) as f64;
    let tick_fraction = (state.tick as f64 / horizon).min(1.0);

    let mut data = vec![0.0; layout.len() * FEATURE_DIM];
    let mut station = Vec::with_capacity(layout.len());
    let mut occupied = Vec::new();
    let mut vacant = Vec::new();

    let mut current: Option<(Station, Vec<&WorkerId>, f64, f64)> = None;
    for (p, &(st, k)) in layout.iter().enumerate() {
        if current.as_ref().is_none_or(|c| c.0 != st) {
            let a = active[st.line][st.stage];
            let est = |n: usize| estimate_station_flow(state, config, &active_lines, st.line, st.stage, n);
            let now = est(a);
            let gain = (est(a + 1) - now) / norm;
            let loss = if a > 0 { (now - est(a - 1)) / norm } else { 0.0 };
            current = Some((st, state.workers_at(st), gain, loss));
        }
        let (_, workers, gain, loss) = current.as_ref().expect("set above");
        let caps = &config.buffer_capacity[st.line];
        let fill = |b: usize| {
            if caps[b] > 0.0 {
                (state.buffers[st.line][b] / caps[b]).clamp(0.0, 1.0)
            } else {
                1.0
            }
        };
        let stage_full = config.slot_capacity[st.stage] as f64 * config.base_rate[st.stage];
        let tput = if stage_full > 0.0 {
            (state.last_tick_throughput[st.stage][st.line] / stage_full).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let n_here = staffing[st.line][st.stage];
        let occupant = workers.get(k).copied();

        let f = &mut data[p * FEATURE_DIM..(p + 1) * FEATURE_DIM];
        f[0] = occupant.is_some() as u8 as f64;
        f[1 + st.stage] = 1.0;
        f[4] = active_lines[st.line] as u8 as f64;
        f[5] = fill(st.stage);
        f[6] = fill(st.stage + 1);
        f[7] = tput;
        f[8] = occupant.is_some_and(|w| state.cooldown(w) > 0) as u8 as f64;
        f[9] = tick_fraction;
        f[10] = 1.0;
        f[11] = (n_here > 0 && k == n_here - 1) as u8 as f64;
        f[12] = (k == n_here) as u8 as f64;
        f[13] = *gain;
        f[14] = *loss;
        f[15] = n_here as f64 / config.slot_capacity[st.stage].max(1) as f64;

        station.push((st.line * N_STAGES + st.stage) as u32);
        match occupant {
            Some(w) => occupied.push((p, w.clone())),
            None => vacant.push(p),
        }
    }
    PositionFeatures {
        data,
        station,
        occupied,
        vacant,
    }
}

pub const GLOBAL_FEATURE_DIM: usize = 26;

/// Aggregate state summary for the value baseline. The first half are plain
/// aggregates; the second half are the same aggregates scaled by the
/// remaining fraction of the shift, since returns scale with time left.
pub fn global_features(state: &SystemState, config: &SimConfig) -> Vec<f64> {
    let n = config.n_lines.max(1) as f64;
    let horizon = config.episode_length.max(1) as f64;
    let remaining = (1.0 - state.tick as f64 / horizon).max(0.0);
    let norm = max_rate(config);

    let mut base = Vec::with_capacity(GLOBAL_FEATURE_DIM / 2);
    for b in 0..4 {
        let fill: f64 = (0..config.n_lines)
            .map(|l| {
                let cap = config.buffer_capacity[l][b];
                if cap > 0.0 {
                    state.buffers[l][b] / cap
                } else {
                    1.0
                }
            })
            .sum();
        base.push(fill / n);
    }
    let active = state.active_staffing();
    for s in 0..N_STAGES {
        let cap = (config.slot_capacity[s] * config.n_lines).max(1) as f64;
        base.push(active.iter().map(|r| r[s]).sum::<usize>() as f64 / cap);
    }
    for s in 0..N_STAGES {
        base.push(state.last_tick_throughput[s].iter().sum::<f64>() / (n * norm));
    }
    let backlog: f64 = state.external_backlog.iter().sum();
    let arrivals: f64 = config.arrival_rate.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    base.push((backlog / arrivals).min(100.0) / 10.0);
    base.push(state.active_lines().iter().filter(|a| **a).count() as f64 / n);
    base.push(remaining);

    let mut out = base.clone();
    out.extend(base.iter().map(|x| x * remaining));
    debug_assert_eq!(out.len(), GLOBAL_FEATURE_DIM);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_scenario, ScenarioParams};

    #[test]
    fn features_are_finite_and_bounded() {
        for seed in 0..50 {
            let (c, s) = generate_scenario(&SimConfig::default(), &ScenarioParams::default(), seed);
            let f = featurize(&s, &c);
            assert_eq!(f.n_positions(), c.total_slots());
            assert_eq!(f.occupied.len() + f.vacant.len(), c.total_slots());
            assert!(f.data.iter().all(|x| x.is_finite()));
            for p in 0..f.n_positions() {
                let r = f.row(p);
                assert!((0.0..=1.0).contains(&r[5]) && (0.0..=1.0).contains(&r[6]));
                assert_eq!(r[1] + r[2] + r[3], 1.0);
            }
            assert!(global_features(&s, &c).iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn occupants_follow_id_order() {
        let (c, s) = generate_scenario(&SimConfig::default(), &ScenarioParams::default(), 4);
        let f = featurize(&s, &c);
        for (p, w) in &f.occupied {
            let st = f.station_of(*p);
            assert_eq!(s.assignment[w], Some(st));
            let k = position_layout(&c)[*p].1;
            assert_eq!(s.workers_at(st)[k], w);
        }
    }

    #[test]
    fn destinations_exclude_own_station() {
        let (c, s) = generate_scenario(&SimConfig::default(), &ScenarioParams::default(), 9);
        let f = featurize(&s, &c);
        let (p, _) = &f.occupied[0];
        let d: Vec<usize> = f.destinations(*p).collect();
        assert_eq!(d[0], *p);
        assert!(d[1..]
            .iter()
            .all(|v| f.station[*v] != f.station[*p] && f.vacant.contains(v)));
    }
}
