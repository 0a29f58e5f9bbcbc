use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::{improvement, r_squared, wape, Wape};
use crate::agents::Policy;
use crate::error::{Error, Result};
use crate::sim::{run_episode, simulate, Decided, EpisodeOptions, ShiftLog, SimConfig, B_12, B_23, B_IN, B_OUT};

/// Re-executes a log's recorded actions from its initial state under
/// `config`, with the log's seed. Actions that are invalid in the replayed
/// state become no-ops with a rejection event.
pub fn replay(log: &ShiftLog, config: &SimConfig) -> Result<ShiftLog> {
    let opts = EpisodeOptions {
        shift_id: log.shift_id.clone(),
        ticks: Some(log.records.len() as u32),
        ..Default::default()
    };
    simulate(log.initial(), config, log.seed, &log.policy_id, &opts, |_, t| {
        Ok(Decided {
            action: log.records[t].action.clone(),
            events: Vec::new(),
        })
    })
}

/// Rolls `policy` out from the log's initial state, config and seed.
pub fn rollout_like(log: &ShiftLog, policy: &dyn Policy) -> Result<ShiftLog> {
    let opts = EpisodeOptions {
        shift_id: log.shift_id.clone(),
        ticks: Some(log.records.len() as u32),
        ..Default::default()
    };
    run_episode(log.initial(), policy, &log.config, log.seed, &opts)
}

/// Hours covered by a log, for per-hour output rates.
pub fn shift_hours(log: &ShiftLog) -> f64 {
    log.records.len() as f64 * log.config.tick_minutes / 60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub mean_output: f64,
    pub improvement_pct: f64,
    pub ci_lo_pct: f64,
    pub ci_hi_pct: f64,
    pub n_shifts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub baseline: String,
    pub baseline_mean_output: f64,
    pub methods: Vec<MethodResult>,
    pub n_shifts: usize,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
    /// `(shift_id, seed)` of every evaluated shift.
    pub shifts: Vec<(String, u64)>,
    pub note: String,
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let baseline = format!("{} (replayed)", self.baseline);
        let w = self
            .methods
            .iter()
            .map(|m| m.method.len())
            .chain([baseline.len(), 6])
            .max()
            .unwrap_or(6);
        writeln!(
            out,
            "{:<w$} {:>12} {:>10} {:>22}",
            "method", "mean output", "vs replay", "95% CI"
        )
        .unwrap();
        writeln!(
            out,
            "{:<w$} {:>12.1} {:>9.2}% {:>22}",
            baseline, self.baseline_mean_output, 0.0, "[0.00%, 0.00%]"
        )
        .unwrap();
        for m in &self.methods {
            writeln!(
                out,
                "{:<w$} {:>12.1} {:>+9.2}% {:>22}",
                m.method,
                m.mean_output,
                m.improvement_pct,
                format!("[{:+.2}%, {:+.2}%]", m.ci_lo_pct, m.ci_hi_pct)
            )
            .unwrap();
        }
        write!(out, "n_shifts = {}; {}", self.n_shifts, self.note).unwrap();
        out
    }
}

pub const EVAL_NOTE: &str =
    "intervals are percentile bootstrap over evaluation shifts and reflect evaluation variance only";

fn sorted_by_id(logs: &[ShiftLog]) -> Vec<&ShiftLog> {
    let mut v: Vec<&ShiftLog> = logs.iter().collect();
    v.sort_by(|a, b| a.shift_id.cmp(&b.shift_id));
    v
}

/// Paired comparison of per-shift outputs. Logs are matched by shift id.
pub fn compare_logs(
    method: &str,
    policy_logs: &[ShiftLog],
    replay_logs: &[ShiftLog],
    resamples: usize,
    seed: u64,
) -> Result<MethodResult> {
    let p = sorted_by_id(policy_logs);
    let r = sorted_by_id(replay_logs);
    if p.len() != r.len() {
        return Err(Error::LengthMismatch {
            left: p.len(),
            right: r.len(),
        });
    }
    for (a, b) in p.iter().zip(&r) {
        if a.shift_id != b.shift_id || a.initial() != b.initial() {
            return Err(Error::Data(format!(
                "shift {} is not paired with the same initial state in both sets",
                a.shift_id
            )));
        }
    }
    let po: Vec<f64> = p.iter().map(|l| l.total_reward()).collect();
    let ro: Vec<f64> = r.iter().map(|l| l.total_reward()).collect();
    let imp = improvement(&po, &ro, resamples, seed)?;
    Ok(MethodResult {
        method: method.to_owned(),
        mean_output: po.iter().sum::<f64>() / po.len() as f64,
        improvement_pct: 100.0 * imp.point,
        ci_lo_pct: 100.0 * imp.lo,
        ci_hi_pct: 100.0 * imp.hi,
        n_shifts: po.len(),
    })
}

/// Replays every historical log, rolls out each policy from the same initial
/// states, and reports improvements against the replayed baseline.
pub fn evaluate(
    historical: &[ShiftLog],
    policies: &[(String, &dyn Policy)],
    resamples: usize,
    seed: u64,
) -> Result<EvalReport> {
    if historical.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let hist = sorted_by_id(historical);
    let replayed: Vec<ShiftLog> = hist.par_iter().map(|l| replay(l, &l.config)).collect::<Result<_>>()?;
    let mut methods = Vec::new();
    for (name, policy) in policies {
        let logs: Vec<ShiftLog> = hist
            .par_iter()
            .map(|l| rollout_like(l, *policy))
            .collect::<Result<_>>()?;
        methods.push(compare_logs(name, &logs, &replayed, resamples, seed)?);
    }
    let baseline_mean_output = replayed.iter().map(|l| l.total_reward()).sum::<f64>() / replayed.len() as f64;
    Ok(EvalReport {
        baseline: hist[0].policy_id.clone(),
        baseline_mean_output,
        methods,
        n_shifts: hist.len(),
        bootstrap_resamples: resamples,
        bootstrap_seed: seed,
        shifts: hist.iter().map(|l| (l.shift_id.clone(), l.seed)).collect(),
        note: EVAL_NOTE.into(),
    })
}

pub const METRIC_NAMES: [&str; 7] = [
    "Stage 1 Throughput",
    "Stage 2 Throughput",
    "Stage 3 (Total) Throughput",
    "Buffer State 1",
    "Buffer State 2",
    "Buffer State 3",
    "Buffer State 4",
];

/// Buffer behind each "Buffer State k" label: the output queue of stage k,
/// with the inbound queue last.
pub const BUFFER_STATE_INDEX: [usize; 4] = [B_12, B_23, B_OUT, B_IN];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricWape {
    pub metric: String,
    pub wape: Wape,
}

/// Seven per-metric WAPEs of `predicted` against `actual`, pooling every
/// (shift, tick, line) observation. Logs are paired by position.
pub fn metric_wapes(predicted: &[&ShiftLog], actual: &[&ShiftLog]) -> Result<Vec<MetricWape>> {
    if predicted.len() != actual.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: actual.len(),
        });
    }
    let mut series: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); 7];
    for (p, a) in predicted.iter().zip(actual) {
        if p.records.len() != a.records.len() {
            return Err(Error::LengthMismatch {
                left: p.records.len(),
                right: a.records.len(),
            });
        }
        for (rp, ra) in p.records.iter().zip(&a.records) {
            for (lp, la) in rp.stage_flows.iter().zip(&ra.stage_flows) {
                for s in 0..3 {
                    series[s].0.push(lp[s]);
                    series[s].1.push(la[s]);
                }
            }
            for (lp, la) in rp.buffer_levels.iter().zip(&ra.buffer_levels) {
                for (k, &b) in BUFFER_STATE_INDEX.iter().enumerate() {
                    series[3 + k].0.push(lp[b]);
                    series[3 + k].1.push(la[b]);
                }
            }
        }
    }
    series
        .iter()
        .zip(METRIC_NAMES)
        .map(|((p, a), name)| {
            Ok(MetricWape {
                metric: name.to_owned(),
                wape: wape(p, a)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub shift_id: String,
    /// Units per hour.
    pub predicted: f64,
    pub actual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scatter {
    pub points: Vec<ScatterPoint>,
    /// `None` when the actual outputs are constant.
    pub r2: Option<f64>,
}

impl Scatter {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("shift_id,predicted,actual\n");
        for p in &self.points {
            writeln!(out, "{},{},{}", p.shift_id, p.predicted, p.actual).unwrap();
        }
        out
    }
}

/// Per-shift predicted vs observed output rates with R^2.
pub fn scatter_from(predicted: &[&ShiftLog], actual: &[&ShiftLog]) -> Result<Scatter> {
    let points: Vec<ScatterPoint> = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| ScatterPoint {
            shift_id: a.shift_id.clone(),
            predicted: p.total_reward() / shift_hours(p),
            actual: a.total_reward() / shift_hours(a),
        })
        .collect();
    let pred: Vec<f64> = points.iter().map(|p| p.predicted).collect();
    let act: Vec<f64> = points.iter().map(|p| p.actual).collect();
    let r2 = r_squared(&pred, &act)?;
    Ok(Scatter { points, r2 })
}

/// Replays the corpus under `config` (keeping each shift's own arrival rates)
/// and compares predicted output rates with the recorded ones.
pub fn scatter_export(corpus: &[ShiftLog], config: &SimConfig) -> Result<Scatter> {
    let actual = sorted_by_id(corpus);
    let predicted: Vec<ShiftLog> = actual
        .par_iter()
        .map(|l| replay(l, &super::calibrate::with_params_of(&l.config, config)))
        .collect::<Result<_>>()?;
    let p: Vec<&ShiftLog> = predicted.iter().collect();
    scatter_from(&p, &actual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{NoReallocation, ScriptedManager, ScriptedManagerConfig};
    use crate::sim::{generate_scenario, Action, JamMode, ScenarioParams};

    fn corpus(n: u64, jam: JamMode) -> Vec<ShiftLog> {
        let base = SimConfig {
            jam_mode: jam,
            ..Default::default()
        };
        (0..n)
            .map(|s| {
                let (c, init) = generate_scenario(&base, &ScenarioParams::default(), s);
                let m = ScriptedManager::for_shift(&ScriptedManagerConfig::default(), s);
                let opts = EpisodeOptions {
                    shift_id: format!("s{s:03}"),
                    ..Default::default()
                };
                run_episode(&init, &m, &c, s, &opts).unwrap()
            })
            .collect()
    }

    #[test]
    fn self_replay_is_exact_and_idempotent() {
        for log in corpus(5, JamMode::Stochastic) {
            let r = replay(&log, &log.config).unwrap();
            assert_eq!(r.records, log.records);
            assert_eq!(replay(&r, &r.config).unwrap(), r);
        }
    }

    #[test]
    fn perturbed_config_gives_nonzero_wape() {
        let logs = corpus(3, JamMode::Deterministic);
        let mut reps = Vec::new();
        for l in &logs {
            let mut c = l.config.clone();
            c.base_rate[2] *= 0.7;
            reps.push(replay(l, &c).unwrap());
        }
        let p: Vec<&ShiftLog> = reps.iter().collect();
        let a: Vec<&ShiftLog> = logs.iter().collect();
        let w = metric_wapes(&p, &a).unwrap();
        assert!(w[2].wape.value > 0.0);
    }

    #[test]
    fn empty_action_log_equals_no_reallocation() {
        let (c, init) = generate_scenario(&SimConfig::default(), &ScenarioParams::default(), 3);
        let noop = run_episode(&init, &NoReallocation, &c, 3, &EpisodeOptions::default()).unwrap();
        let r = replay(&noop, &c).unwrap();
        assert!(r.actions().all(Action::is_empty));
        assert_eq!(r.records, noop.records);
    }

    #[test]
    fn replay_against_itself_is_zero() {
        let logs = corpus(8, JamMode::Deterministic);
        let rep = evaluate(&logs, &[], 200, 1).unwrap();
        assert_eq!(rep.n_shifts, 8);
        let replayed: Vec<ShiftLog> = logs.iter().map(|l| replay(l, &l.config).unwrap()).collect();
        let m = compare_logs("replay", &replayed, &logs, 200, 1).unwrap();
        assert_eq!((m.improvement_pct, m.ci_lo_pct, m.ci_hi_pct), (0.0, 0.0, 0.0));
    }

    #[test]
    fn scatter_of_self_corpus_is_identity() {
        let logs = corpus(6, JamMode::Deterministic);
        let s = scatter_export(&logs, &SimConfig::default()).unwrap();
        assert!(s.points.iter().all(|p| p.predicted == p.actual));
        assert_eq!(s.r2, Some(1.0));
        assert!(s.to_csv().starts_with("shift_id,predicted,actual\n"));
    }
}
