use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::config::{SimConfig, N_BUFFERS, N_STAGES};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorkerId(pub String);

impl WorkerId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for WorkerId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

/// A (line, stage) pair. Zero-based in Rust; one-based in every JSON and text form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Station {
    pub line: usize,
    pub stage: usize,
}

impl Station {
    pub fn new(line: usize, stage: usize) -> Self {
        Self { line, stage }
    }

    pub fn exists_in(&self, config: &SimConfig) -> bool {
        self.line < config.n_lines && self.stage < N_STAGES
    }
}

impl fmt::Display for Station {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {} stage {}", self.line + 1, self.stage + 1)
    }
}

#[derive(Serialize, Deserialize)]
struct StationWire {
    line: usize,
    stage: usize,
}

impl Serialize for Station {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        StationWire {
            line: self.line + 1,
            stage: self.stage + 1,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Station {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = StationWire::deserialize(d)?;
        if w.line == 0 || w.stage == 0 {
            return Err(serde::de::Error::custom("line and stage are 1-based"));
        }
        Ok(Station::new(w.line - 1, w.stage - 1))
    }
}

/// Full simulator state at the start of a tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub tick: u32,
    /// `buffers[line][role]`, roles `b_in, b_12, b_23, b_out`.
    pub buffers: Vec<[f64; N_BUFFERS]>,
    pub external_backlog: Vec<f64>,
    /// `None` is off-floor.
    pub assignment: BTreeMap<WorkerId, Option<Station>>,
    pub cooldown_remaining: BTreeMap<WorkerId, u32>,
    pub jam_remaining: Vec<u32>,
    pub cumulative_output: f64,
    pub cumulative_arrivals: f64,
    /// `last_tick_throughput[stage][line]`.
    pub last_tick_throughput: [Vec<f64>; N_STAGES],
}

impl SystemState {
    /// Empty buffers, every listed worker off-floor.
    pub fn empty(config: &SimConfig, workers: impl IntoIterator<Item = WorkerId>) -> Self {
        let n = config.n_lines;
        let mut assignment = BTreeMap::new();
        let mut cooldown_remaining = BTreeMap::new();
        for w in workers {
            assignment.insert(w.clone(), None);
            cooldown_remaining.insert(w, 0);
        }
        Self {
            tick: 0,
            buffers: vec![[0.0; N_BUFFERS]; n],
            external_backlog: vec![0.0; n],
            assignment,
            cooldown_remaining,
            jam_remaining: vec![0; n],
            cumulative_output: 0.0,
            cumulative_arrivals: 0.0,
            last_tick_throughput: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }

    /// Sets `cumulative_arrivals` so that conservation holds for a hand-built state.
    pub fn with_balanced_accounting(mut self) -> Self {
        self.cumulative_arrivals = self.units_in_system() + self.cumulative_output;
        self
    }

    pub fn n_lines(&self) -> usize {
        self.buffers.len()
    }

    pub fn cooldown(&self, worker: &WorkerId) -> u32 {
        self.cooldown_remaining.get(worker).copied().unwrap_or(0)
    }

    /// Workers per station (including those cooling down), `[line][stage]`.
    pub fn staffing(&self) -> Vec<[usize; N_STAGES]> {
        let mut out = vec![[0; N_STAGES]; self.n_lines()];
        for st in self.assignment.values().flatten() {
            if st.line < out.len() && st.stage < N_STAGES {
                out[st.line][st.stage] += 1;
            }
        }
        out
    }

    /// Productive workers per station, `[line][stage]`.
    pub fn active_staffing(&self) -> Vec<[usize; N_STAGES]> {
        let mut out = vec![[0; N_STAGES]; self.n_lines()];
        for (w, st) in &self.assignment {
            if let Some(st) = st {
                if st.line < out.len() && st.stage < N_STAGES && self.cooldown(w) == 0 {
                    out[st.line][st.stage] += 1;
                }
            }
        }
        out
    }

    /// Workers at a station in ascending id order; slot `k` holds the `k`-th.
    pub fn workers_at(&self, station: Station) -> Vec<&WorkerId> {
        self.assignment
            .iter()
            .filter(|(_, st)| **st == Some(station))
            .map(|(w, _)| w)
            .collect()
    }

    pub fn line_active(&self, line: usize) -> bool {
        self.assignment.values().flatten().any(|st| st.line == line)
    }

    pub fn active_lines(&self) -> Vec<bool> {
        let mut out = vec![false; self.n_lines()];
        for st in self.assignment.values().flatten() {
            if st.line < out.len() {
                out[st.line] = true;
            }
        }
        out
    }

    pub fn units_in_system(&self) -> f64 {
        let buffered: f64 = self.buffers.iter().flat_map(|b| b.iter()).sum();
        buffered + self.external_backlog.iter().sum::<f64>()
    }

    /// `cumulative_arrivals - (backlog + buffers + output)`. Units drained from
    /// `b_out` are counted in `cumulative_output`, so there is no separate term.
    pub fn conservation_residual(&self) -> f64 {
        self.cumulative_arrivals - (self.units_in_system() + self.cumulative_output)
    }

    pub fn digest(&self) -> String {
        super::digest_json(self)
    }
}
