//! Canonical human-readable state description.
//!
//! ```text
//! SYSTEM t=<tick>/<T>
//! LINE <i> ACTIVE|CLOSED staff <s1>/<s2>/<s3> fill <b_in>%/<b12>%/<b23>%/<b_out>% tput <units>/tick
//! TOTAL staff <on floor>/<workers> cooling <n> tput <units>/tick output <units> backlog <units>
//! ```
//!
//! Lines are numbered from 1. Percentages and throughputs carry one decimal,
//! rounded half-to-even on the exact binary value. Lines end with `\n`.

use std::fmt::Write as _;

use crate::sim::{SimConfig, SystemState, N_STAGES};

/// Fixed one-decimal rendering; never produces `-0.0`.
pub fn fmt1(x: f64) -> String {
    let s = format!("{:.1}", x);
    if s == "-0.0" {
        "0.0".to_owned()
    } else {
        s
    }
}

fn pct(level: f64, capacity: f64) -> String {
    if capacity <= 0.0 {
        return fmt1(0.0);
    }
    fmt1(100.0 * level / capacity)
}

pub fn serialize_state(state: &SystemState, config: &SimConfig) -> String {
    let mut out = String::new();
    let staffing = state.staffing();
    let active = state.active_lines();
    let _ = writeln!(out, "SYSTEM t={}/{}", state.tick, config.episode_length);
    for line in 0..state.n_lines() {
        let st = staffing[line];
        let b = &state.buffers[line];
        let cap = &config.buffer_capacity[line];
        let _ = writeln!(
            out,
            "LINE {} {} staff {}/{}/{} fill {}%/{}%/{}%/{}% tput {}/tick",
            line + 1,
            if active[line] { "ACTIVE" } else { "CLOSED" },
            st[0],
            st[1],
            st[2],
            pct(b[0], cap[0]),
            pct(b[1], cap[1]),
            pct(b[2], cap[2]),
            pct(b[3], cap[3]),
            fmt1(state.last_tick_throughput[N_STAGES - 1][line]),
        );
    }
    let on_floor = state.assignment.values().filter(|a| a.is_some()).count();
    let cooling = state.cooldown_remaining.values().filter(|c| **c > 0).count();
    let tput: f64 = state.last_tick_throughput[N_STAGES - 1].iter().sum();
    let backlog: f64 = state.external_backlog.iter().sum();
    let _ = writeln!(
        out,
        "TOTAL staff {}/{} cooling {} tput {}/tick output {} backlog {}",
        on_floor,
        state.assignment.len(),
        cooling,
        fmt1(tput),
        fmt1(state.cumulative_output),
        fmt1(backlog),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Station, WorkerId};

    #[test]
    fn empty_system() {
        let c = SimConfig::with_lines(2);
        let s = SystemState::empty(&c, []);
        assert_eq!(
            serialize_state(&s, &c),
            "SYSTEM t=0/50\n\
             LINE 1 CLOSED staff 0/0/0 fill 0.0%/0.0%/0.0%/0.0% tput 0.0/tick\n\
             LINE 2 CLOSED staff 0/0/0 fill 0.0%/0.0%/0.0%/0.0% tput 0.0/tick\n\
             TOTAL staff 0/0 cooling 0 tput 0.0/tick output 0.0 backlog 0.0\n"
        );
    }

    #[test]
    fn one_third_fill_and_rounding() {
        let c = SimConfig::with_lines(1);
        let mut s = SystemState::empty(&c, [WorkerId::from("w0")]);
        s.assignment.insert("w0".into(), Some(Station::new(0, 1)));
        s.buffers[0] = [40.0, 20.0, 0.1, 0.25];
        s.last_tick_throughput[2][0] = 12.25;
        let text = serialize_state(&s, &c);
        assert!(
            text.contains("LINE 1 ACTIVE staff 0/1/0 fill 33.3%/33.3%/0.2%/0.1% tput 12.2/tick"),
            "{text}"
        );
    }

    #[test]
    fn half_even_ties() {
        assert_eq!(fmt1(0.25), "0.2");
        assert_eq!(fmt1(0.75), "0.8");
        assert_eq!(fmt1(12.25), "12.2");
        assert_eq!(fmt1(-0.01), "0.0");
    }
}
