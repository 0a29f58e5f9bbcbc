use serde::{Deserialize, Serialize};

use crate::error::{Error, FieldError, Result};

pub const N_STAGES: usize = 3;
pub const N_BUFFERS: usize = 4;
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Buffer roles on a line, in flow order.
pub const B_IN: usize = 0;
pub const B_12: usize = 1;
pub const B_23: usize = 2;
pub const B_OUT: usize = 3;

pub const BUFFER_NAMES: [&str; N_BUFFERS] = ["b_in", "b_12", "b_23", "b_out"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JamMode {
    /// Stage 1 of a line runs at `1 - jam_coupling` while an adjacent line is active.
    Deterministic,
    /// Adjacent active lines randomly halt each other's stage 1 for `jam_duration` ticks.
    Stochastic,
}

/// All dynamics parameters of the sortation system.
///
/// Stage `s` of a line reads from buffer `s` and writes into buffer `s + 1`:
/// `b_in -> stage 1 -> b_12 -> stage 2 -> b_23 -> stage 3 -> b_out -> dispatch`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub schema_version: u32,
    pub n_lines: usize,
    pub n_stages: usize,
    /// Maximum workers per stage on each line.
    pub slot_capacity: [usize; N_STAGES],
    /// Units per tick processed by one active worker at each stage.
    pub base_rate: [f64; N_STAGES],
    /// Per line: capacities of `b_in`, `b_12`, `b_23`, `b_out`.
    pub buffer_capacity: Vec<[f64; N_BUFFERS]>,
    /// Units per tick entering `b_in` of each line.
    pub arrival_rate: Vec<f64>,
    pub throttle_knee: f64,
    pub throttle_floor: f64,
    pub jam_coupling: f64,
    pub jam_mode: JamMode,
    pub jam_duration: u32,
    pub jam_hazard_scale: f64,
    /// Units per tick drained from each line's `b_out`.
    pub dispatch_rate: f64,
    /// Ticks a moved worker spends unproductive.
    pub cooldown: u32,
    pub tick_minutes: f64,
    pub episode_length: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::with_lines(4)
    }
}

impl SimConfig {
    pub fn with_lines(n_lines: usize) -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            n_lines,
            n_stages: N_STAGES,
            slot_capacity: [4, 6, 2],
            base_rate: [6.0, 4.0, 12.0],
            buffer_capacity: vec![[120.0, 60.0, 40.0, 200.0]; n_lines],
            arrival_rate: vec![15.0; n_lines],
            throttle_knee: 0.7,
            throttle_floor: 0.2,
            jam_coupling: 0.15,
            jam_mode: JamMode::Deterministic,
            jam_duration: 2,
            jam_hazard_scale: 0.2,
            dispatch_rate: 30.0,
            cooldown: 1,
            tick_minutes: 5.0,
            episode_length: 50,
        }
    }

    pub fn stations_per_line(&self) -> usize {
        N_STAGES
    }

    pub fn slots_per_line(&self) -> usize {
        self.slot_capacity.iter().sum()
    }

    pub fn total_slots(&self) -> usize {
        self.slots_per_line() * self.n_lines
    }

    /// Checks every invariant and reports all offending fields at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut nonneg = |field: String, v: f64| {
            if !v.is_finite() || v < 0.0 {
                errs.push(FieldError::new(field, format!("must be finite and >= 0, got {v}")));
            }
        };
        for (s, r) in self.base_rate.iter().enumerate() {
            nonneg(format!("base_rate[{s}]"), *r);
        }
        for (l, caps) in self.buffer_capacity.iter().enumerate() {
            for (b, c) in caps.iter().enumerate() {
                nonneg(format!("buffer_capacity[{l}][{b}]"), *c);
            }
        }
        for (l, a) in self.arrival_rate.iter().enumerate() {
            nonneg(format!("arrival_rate[{l}]"), *a);
        }
        nonneg("dispatch_rate".into(), self.dispatch_rate);
        nonneg("jam_hazard_scale".into(), self.jam_hazard_scale);

        if self.n_lines == 0 {
            errs.push(FieldError::new("n_lines", "must be at least 1"));
        }
        if self.n_stages != N_STAGES {
            errs.push(FieldError::new("n_stages", format!("must be exactly {N_STAGES}")));
        }
        for (s, c) in self.slot_capacity.iter().enumerate() {
            if *c == 0 {
                errs.push(FieldError::new(format!("slot_capacity[{s}]"), "must be at least 1"));
            }
        }
        if self.buffer_capacity.len() != self.n_lines {
            errs.push(FieldError::new(
                "buffer_capacity",
                format!("expected {} lines, got {}", self.n_lines, self.buffer_capacity.len()),
            ));
        }
        if self.arrival_rate.len() != self.n_lines {
            errs.push(FieldError::new(
                "arrival_rate",
                format!("expected {} lines, got {}", self.n_lines, self.arrival_rate.len()),
            ));
        }
        if !(0.0..1.0).contains(&self.throttle_knee) {
            errs.push(FieldError::new("throttle_knee", "must satisfy 0 <= knee < 1"));
        }
        if !(0.0..=1.0).contains(&self.throttle_floor) {
            errs.push(FieldError::new("throttle_floor", "must satisfy 0 <= floor <= 1"));
        }
        if !(0.0..=1.0).contains(&self.jam_coupling) {
            errs.push(FieldError::new("jam_coupling", "must satisfy 0 <= coupling <= 1"));
        }
        if !(self.tick_minutes.is_finite() && self.tick_minutes > 0.0) {
            errs.push(FieldError::new("tick_minutes", "must be > 0"));
        }
        if self.episode_length == 0 {
            errs.push(FieldError::new("episode_length", "must be at least 1"));
        }
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            errs.push(FieldError::new(
                "schema_version",
                format!(
                    "unsupported version {}, expected {CONFIG_SCHEMA_VERSION}",
                    self.schema_version
                ),
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs))
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        crate::sim::digest_json(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        SimConfig::default().validate().unwrap();
        assert_eq!(SimConfig::default().total_slots(), 48);
    }

    #[test]
    fn reports_every_bad_field() {
        let mut c = SimConfig {
            throttle_floor: 1.5,
            throttle_knee: 1.0,
            ..Default::default()
        };
        c.slot_capacity[1] = 0;
        c.arrival_rate.pop();
        c.base_rate[2] = -1.0;
        let Err(Error::InvalidConfig(errs)) = c.validate() else {
            panic!("expected config errors");
        };
        let fields: Vec<_> = errs.iter().map(|e| e.field.as_str()).collect();
        for f in [
            "throttle_floor",
            "throttle_knee",
            "slot_capacity[1]",
            "arrival_rate",
            "base_rate[2]",
        ] {
            assert!(fields.contains(&f), "{f} missing from {fields:?}");
        }
    }

    #[test]
    fn partial_json_fills_defaults_and_rejects_unknown_fields() {
        let c = SimConfig::from_json(r#"{"jam_coupling": 0.3}"#).unwrap();
        assert_eq!(c.jam_coupling, 0.3);
        assert_eq!(c.n_lines, 4);
        assert!(SimConfig::from_json(r#"{"jam_copling": 0.3}"#).is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = SimConfig::with_lines(2);
        let back = SimConfig::from_json(&c.to_json_pretty()).unwrap();
        assert_eq!(c, back);
    }
}
