use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::replay::{metric_wapes, replay, scatter_from, MetricWape, Scatter};
use crate::error::{Error, Result};
use crate::sim::{ShiftLog, SimConfig};

/// A simulator parameter the calibrator may adjust.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibParam {
    BaseRate1,
    BaseRate2,
    BaseRate3,
    ThrottleKnee,
    ThrottleFloor,
    JamCoupling,
    DispatchRate,
}

impl CalibParam {
    pub const ALL: [CalibParam; 7] = [
        CalibParam::BaseRate1,
        CalibParam::BaseRate2,
        CalibParam::BaseRate3,
        CalibParam::ThrottleKnee,
        CalibParam::ThrottleFloor,
        CalibParam::JamCoupling,
        CalibParam::DispatchRate,
    ];

    pub fn get(self, c: &SimConfig) -> f64 {
        match self {
            CalibParam::BaseRate1 => c.base_rate[0],
            CalibParam::BaseRate2 => c.base_rate[1],
            CalibParam::BaseRate3 => c.base_rate[2],
            CalibParam::ThrottleKnee => c.throttle_knee,
            CalibParam::ThrottleFloor => c.throttle_floor,
            CalibParam::JamCoupling => c.jam_coupling,
            CalibParam::DispatchRate => c.dispatch_rate,
        }
    }

    pub fn set(self, c: &mut SimConfig, v: f64) {
        match self {
            CalibParam::BaseRate1 => c.base_rate[0] = v,
            CalibParam::BaseRate2 => c.base_rate[1] = v,
            CalibParam::BaseRate3 => c.base_rate[2] = v,
            CalibParam::ThrottleKnee => c.throttle_knee = v,
            CalibParam::ThrottleFloor => c.throttle_floor = v,
            CalibParam::JamCoupling => c.jam_coupling = v,
            CalibParam::DispatchRate => c.dispatch_rate = v,
        }
    }
}

/// `target` with every calibratable parameter taken from `source`. Per-shift
/// quantities such as arrival rates stay as recorded.
pub fn with_params_of(target: &SimConfig, source: &SimConfig) -> SimConfig {
    let mut c = target.clone();
    for p in CalibParam::ALL {
        p.set(&mut c, p.get(source));
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchAxis {
    pub param: CalibParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub axes: Vec<SearchAxis>,
    #[serde(default = "default_sweeps")]
    pub max_sweeps: usize,
}

fn default_sweeps() -> usize {
    3
}

impl SearchSpace {
    /// For each parameter, `current * (1 + k * rel_step)` for `k` in
    /// `-steps..=steps`.
    pub fn around(config: &SimConfig, params: &[CalibParam], rel_step: f64, steps: i32) -> Self {
        let axes = params
            .iter()
            .map(|&param| {
                let v = param.get(config);
                SearchAxis {
                    param,
                    values: (-steps..=steps).map(|k| v * (1.0 + k as f64 * rel_step)).collect(),
                }
            })
            .collect();
        Self {
            axes,
            max_sweeps: default_sweeps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub metrics: Vec<MetricWape>,
    /// Total-throughput WAPE, the search objective.
    pub objective: f64,
    pub r2: Option<f64>,
    pub scatter: Scatter,
    pub parameters: Vec<(CalibParam, f64)>,
    pub sweeps: usize,
    pub evaluations: usize,
}

impl CalibrationReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        for m in &self.metrics {
            let flag = if m.wape.small_denominator {
                "  (small denominator)"
            } else {
                ""
            };
            out.push_str(&format!("{:<28} {:>8.3}%{flag}\n", m.metric, 100.0 * m.wape.value));
        }
        match self.r2 {
            Some(r2) => out.push_str(&format!("R^2 of per-shift output rate: {r2:.4}\n")),
            None => out.push_str("R^2 undefined: constant observed output\n"),
        }
        for (p, v) in &self.parameters {
            out.push_str(&format!("{p:?} = {v}\n"));
        }
        out
    }
}

struct Scored {
    objective: f64,
    total: f64,
}

fn assess(corpus: &[ShiftLog], candidate: &SimConfig) -> Result<(Vec<ShiftLog>, Vec<MetricWape>)> {
    let replays: Vec<ShiftLog> = corpus
        .par_iter()
        .map(|l| replay(l, &with_params_of(&l.config, candidate)))
        .collect::<Result<_>>()?;
    let p: Vec<&ShiftLog> = replays.iter().collect();
    let a: Vec<&ShiftLog> = corpus.iter().collect();
    let w = metric_wapes(&p, &a)?;
    Ok((replays, w))
}

fn score(w: &[MetricWape]) -> Scored {
    let finite = |x: f64| if x.is_finite() { x } else { f64::MAX };
    Scored {
        objective: finite(w[2].wape.value),
        total: w.iter().map(|m| finite(m.wape.value)).sum(),
    }
}

/// Coordinate-descent grid search. Each sweep visits the axes in order and
/// moves a parameter to the grid value with the lowest total-throughput
/// WAPE, breaking ties by the sum of all seven WAPEs and then in favour of
/// the current value. Stops after a sweep without changes.
pub fn calibrate(
    corpus: &[ShiftLog],
    initial: &SimConfig,
    space: &SearchSpace,
) -> Result<(SimConfig, CalibrationReport)> {
    if space.axes.is_empty() || space.axes.iter().any(|a| a.values.is_empty()) {
        return Err(Error::EmptySearchSpace);
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut corpus = corpus.to_vec();
    corpus.sort_by(|a, b| a.shift_id.cmp(&b.shift_id));
    initial.validate()?;

    let mut current = initial.clone();
    let mut best = score(&assess(&corpus, &current)?.1);
    let mut evaluations = 1;
    let mut sweeps = 0;
    const TOL: f64 = 1e-12;
    for _ in 0..space.max_sweeps.max(1) {
        sweeps += 1;
        let mut changed = false;
        for axis in &space.axes {
            let here = axis.param.get(&current);
            for &v in &axis.values {
                if v == here {
                    continue;
                }
                let mut cand = current.clone();
                axis.param.set(&mut cand, v);
                if cand.validate().is_err() {
                    continue;
                }
                let s = score(&assess(&corpus, &cand)?.1);
                evaluations += 1;
                let better = s.objective < best.objective - TOL
                    || (s.objective <= best.objective + TOL && s.total < best.total - TOL);
                if better {
                    best = s;
                    current = cand;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let (replays, metrics) = assess(&corpus, &current)?;
    let p: Vec<&ShiftLog> = replays.iter().collect();
    let a: Vec<&ShiftLog> = corpus.iter().collect();
    let scatter = scatter_from(&p, &a)?;
    let report = CalibrationReport {
        objective: metrics[2].wape.value,
        metrics,
        r2: scatter.r2,
        scatter,
        parameters: space.axes.iter().map(|ax| (ax.param, ax.param.get(&current))).collect(),
        sweeps,
        evaluations,
    };
    Ok((current, report))
}
