use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{featurize, PositionFeatures};
use super::policy::FactorizedPolicy;
use super::value::{compute_returns, AdvantageScale, ValueModel};
use crate::error::{Error, FieldError, Result};
use crate::seed;
use crate::sim::ShiftLog;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the behavioral log-likelihood term in the actor-critic loss.
    pub alpha: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    /// First-moment decay of the Adam optimizer.
    pub momentum: f64,
    pub batch_size: usize,
    /// Epochs of plain behavior cloning (and of the actor-critic phase).
    pub epochs: usize,
    /// Extra fine-tuning epochs for BC-FT on the top-reward subset.
    pub finetune_epochs: usize,
    pub bcft_top_fraction: f64,
    pub standardize_advantages: bool,
    /// Epochs without held-out improvement before a phase stops.
    pub patience: usize,
    pub heldout_fraction: f64,
    pub key_dim: usize,
    pub init_scale: f64,
    pub temperature: f64,
    pub grad_clip: f64,
    pub value_ridge: f64,
    /// Behavior-cloning epochs run before the actor-critic phase.
    pub ac_warm_start_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 1.0,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 64,
            epochs: 20,
            finetune_epochs: 10,
            bcft_top_fraction: 0.25,
            standardize_advantages: true,
            patience: 4,
            heldout_fraction: 0.2,
            key_dim: super::policy::DEFAULT_KEY_DIM,
            init_scale: 0.1,
            temperature: 1.0,
            grad_clip: 10.0,
            value_ridge: 1e-6,
            ac_warm_start_epochs: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut check = |ok: bool, field: &str, msg: &str| {
            if !ok {
                errs.push(FieldError::new(field, msg));
            }
        };
        check(
            self.alpha >= 0.0 && self.alpha.is_finite(),
            "alpha",
            "must be finite and >= 0",
        );
        check(self.gamma > 0.0 && self.gamma <= 1.0, "gamma", "must lie in (0, 1]");
        check(
            self.bcft_top_fraction > 0.0 && self.bcft_top_fraction <= 1.0,
            "bcft_top_fraction",
            "must lie in (0, 1]",
        );
        check(self.learning_rate > 0.0, "learning_rate", "must be > 0");
        check((0.0..1.0).contains(&self.momentum), "momentum", "must lie in [0, 1)");
        check(self.batch_size > 0, "batch_size", "must be > 0");
        check(
            (0.0..1.0).contains(&self.heldout_fraction),
            "heldout_fraction",
            "must lie in [0, 1)",
        );
        check(self.key_dim > 0, "key_dim", "must be > 0");
        check(self.temperature > 0.0, "temperature", "must be > 0");
        check(self.grad_clip > 0.0, "grad_clip", "must be > 0");
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bc,
    Bcft,
    Ac,
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "bc" => Ok(Method::Bc),
            "bcft" => Ok(Method::Bcft),
            "ac" => Ok(Method::Ac),
            other => Err(format!("unknown method {other:?} (expected bc, bcft or ac)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_ll: f64,
    pub heldout_ll: f64,
    pub mean_a: f64,
    pub loss: f64,
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,train_ll,heldout_ll,mean_A,loss\n");
    for m in metrics {
        writeln!(
            out,
            "{},{},{},{},{}",
            m.epoch, m.train_ll, m.heldout_ll, m.mean_a, m.loss
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: FactorizedPolicy,
    pub value: Option<ValueModel>,
    pub metrics: Vec<EpochMetrics>,
    /// Epoch whose parameters were kept, when early stopping cut a phase short.
    pub early_stop_epoch: Option<usize>,
}

/// One featurized decision with its realised destinations.
#[derive(Debug, Clone)]
pub struct Sample {
    pub feats: PositionFeatures,
    pub targets: Vec<usize>,
}

struct Corpus {
    samples: Vec<Sample>,
    /// Sample index range and total reward per shift.
    shifts: Vec<(std::ops::Range<usize>, f64)>,
}

fn prepare(logs: &[ShiftLog]) -> Result<Corpus> {
    if logs.is_empty() || logs.iter().all(|l| l.records.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    let per_shift: Vec<Vec<Sample>> = logs
        .par_iter()
        .map(|log| {
            log.records
                .iter()
                .enumerate()
                .map(|(t, rec)| {
                    let feats = featurize(&log.states[t], &log.config);
                    let targets = FactorizedPolicy::targets(&feats, &rec.action).map_err(|e| {
                        Error::UndefinedLikelihood(format!("shift {} tick {}: {e}", log.shift_id, rec.tick))
                    })?;
                    Ok(Sample { feats, targets })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut samples = Vec::new();
    let mut shifts = Vec::new();
    for (log, s) in logs.iter().zip(per_shift) {
        let start = samples.len();
        samples.extend(s);
        shifts.push((start..samples.len(), log.total_reward()));
    }
    Ok(Corpus { samples, shifts })
}

/// Deterministic shift-level split: `(train, heldout)` shift indices.
pub fn split_shifts(n: usize, heldout_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed::derive(seed, "heldout_split", 0)));
    let n_held = if n >= 2 {
        ((n as f64 * heldout_fraction).round() as usize).min(n - 1)
    } else {
        0
    };
    let mut held = idx[..n_held].to_vec();
    let mut train = idx[n_held..].to_vec();
    held.sort_unstable();
    train.sort_unstable();
    (train, held)
}

/// `-(1/N) sum_i w_i log pi(a_i | s_i)` and its gradient.
pub fn weighted_nll_and_gradient(policy: &FactorizedPolicy, batch: &[(&Sample, f64)]) -> (f64, Vec<f64>, f64) {
    const CHUNK: usize = 16;
    let parts: Vec<(f64, f64, Vec<f64>)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; policy.n_params()];
            let mut wl = 0.0;
            let mut ll = 0.0;
            for (s, w) in chunk {
                let lp = policy.accumulate_gradient(&s.feats, &s.targets, *w, &mut g);
                wl += w * lp;
                ll += lp;
            }
            (wl, ll, g)
        })
        .collect();
    let n = batch.len().max(1) as f64;
    let mut grad = vec![0.0; policy.n_params()];
    let (mut wl, mut ll) = (0.0, 0.0);
    for (a, b, g) in parts {
        wl += a;
        ll += b;
        for (x, y) in grad.iter_mut().zip(g) {
            *x -= y / n;
        }
    }
    (-wl / n, grad, ll / n)
}

/// `(weighted loss, mean log-likelihood)` without gradients.
fn evaluate(policy: &FactorizedPolicy, batch: &[(&Sample, f64)]) -> (f64, f64) {
    if batch.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let parts: Vec<(f64, f64)> = batch
        .par_chunks(32)
        .map(|chunk| {
            chunk.iter().fold((0.0, 0.0), |(wl, ll), (s, w)| {
                let lp = policy.log_prob_targets(&s.feats, &s.targets);
                (wl + w * lp, ll + lp)
            })
        })
        .collect();
    let n = batch.len() as f64;
    let (wl, ll) = parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    (-wl / n, ll / n)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    beta1: f64,
}

impl Adam {
    fn new(n: usize, lr: f64, beta1: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
            beta1,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        const BETA2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grad[i] * grad[i];
            theta[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

/// A run of epochs over fixed training and held-out sets.
struct Phase {
    epochs: usize,
    /// `(sample index, loss weight, raw advantage)`.
    train: Vec<(usize, f64, f64)>,
    /// `(sample index, weight)` of the held-out early-stopping criterion.
    heldout: Vec<(usize, f64)>,
}

fn optimize(
    mut policy: FactorizedPolicy,
    samples: &[Sample],
    phases: &[Phase],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(FactorizedPolicy, Vec<EpochMetrics>, Option<usize>)> {
    let mut theta = policy.params();
    let mut opt = Adam::new(theta.len(), cfg.learning_rate, cfg.momentum);
    let mut metrics = Vec::new();
    let mut epoch = 0usize;
    let mut stopped_at = None;
    let mut first_loss: Option<f64> = None;

    for phase in phases {
        let heldout: Vec<(&Sample, f64)> = phase.heldout.iter().map(|&(i, w)| (&samples[i], w)).collect();
        let mut best: Option<(f64, Vec<f64>, usize)> = None;
        let mut since_best = 0usize;
        let mean_a = if phase.train.is_empty() {
            0.0
        } else {
            phase.train.iter().map(|t| t.2).sum::<f64>() / phase.train.len() as f64
        };
        for _ in 0..phase.epochs {
            let mut order = phase.train.clone();
            order.shuffle(&mut seed::rng(seed::derive(seed, "epoch_order", epoch as u64)));
            let (mut loss_sum, mut ll_sum, mut n_seen) = (0.0, 0.0, 0usize);
            for mb in order.chunks(cfg.batch_size) {
                let batch: Vec<(&Sample, f64)> = mb.iter().map(|&(i, w, _)| (&samples[i], w)).collect();
                policy.set_params(&theta);
                let (loss, mut grad, ll) = weighted_nll_and_gradient(&policy, &batch);
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if !loss.is_finite() || !norm.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        detail: format!("non-finite loss {loss} or gradient norm {norm}"),
                    });
                }
                if norm > cfg.grad_clip {
                    let s = cfg.grad_clip / norm;
                    grad.iter_mut().for_each(|g| *g *= s);
                }
                opt.step(&mut theta, &grad);
                loss_sum += loss * mb.len() as f64;
                ll_sum += ll * mb.len() as f64;
                n_seen += mb.len();
            }
            policy.set_params(&theta);
            let n = n_seen.max(1) as f64;
            let (train_loss, train_ll) = (loss_sum / n, ll_sum / n);
            let first = *first_loss.get_or_insert(train_loss.abs().max(1.0));
            if !policy.is_finite() || train_loss.abs() > 1e6 * first {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("training loss {train_loss} exploded (first epoch {first})"),
                });
            }
            let (held_loss, held_ll) = evaluate(&policy, &heldout);
            metrics.push(EpochMetrics {
                epoch,
                train_ll,
                heldout_ll: held_ll,
                mean_a,
                loss: train_loss,
            });
            log::debug!("epoch {epoch}: loss {train_loss:.4} train_ll {train_ll:.4} heldout_ll {held_ll:.4}");
            epoch += 1;

            if heldout.is_empty() {
                continue;
            }
            if held_loss.is_finite() && best.as_ref().is_none_or(|b| held_loss < b.0) {
                best = Some((held_loss, theta.clone(), epoch - 1));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience.max(1) {
                    break;
                }
            }
        }
        if let Some((_, params, at)) = best {
            if at + 1 != epoch {
                stopped_at = Some(at);
            }
            theta = params;
        }
    }
    policy.set_params(&theta);
    Ok((policy, metrics, stopped_at))
}

fn indices(corpus: &Corpus, shifts: &[usize]) -> Vec<usize> {
    shifts.iter().flat_map(|&s| corpus.shifts[s].0.clone()).collect()
}

fn bc_phase(corpus: &Corpus, train: &[usize], held: &[usize], epochs: usize) -> Phase {
    Phase {
        epochs,
        train: indices(corpus, train).into_iter().map(|i| (i, 1.0, 0.0)).collect(),
        heldout: indices(corpus, held).into_iter().map(|i| (i, 1.0)).collect(),
    }
}

fn init_policy(cfg: &TrainConfig, seed: u64) -> FactorizedPolicy {
    let mut p = FactorizedPolicy::random(cfg.key_dim, cfg.init_scale, seed);
    p.temperature = cfg.temperature;
    p
}

/// Maximum-likelihood behavior cloning on every shift.
pub fn train_bc(logs: &[ShiftLog], cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let corpus = prepare(logs)?;
    let (train, held) = split_shifts(corpus.shifts.len(), cfg.heldout_fraction, seed);
    let phases = [bc_phase(&corpus, &train, &held, cfg.epochs)];
    let (policy, metrics, early_stop_epoch) = optimize(init_policy(cfg, seed), &corpus.samples, &phases, cfg, seed)?;
    Ok(TrainOutcome {
        policy,
        value: None,
        metrics,
        early_stop_epoch,
    })
}

/// The top `floor(q * n)` shifts by total reward.
fn top_shifts(corpus: &Corpus, shifts: &[usize], q: f64) -> Result<Vec<usize>> {
    let k = (q * shifts.len() as f64 + 1e-9).floor() as usize;
    if k == 0 {
        return Err(Error::EmptySubset {
            fraction: q,
            shifts: shifts.len(),
        });
    }
    let mut ranked = shifts.to_vec();
    ranked.sort_by(|a, b| corpus.shifts[*b].1.total_cmp(&corpus.shifts[*a].1).then(a.cmp(b)));
    ranked.truncate(k);
    ranked.sort_unstable();
    Ok(ranked)
}

/// Behavior cloning on all shifts, then fine-tuning on the top
/// `bcft_top_fraction` of training shifts by cumulative reward. With a
/// fraction of 1 this is plain behavior cloning for `epochs + finetune_epochs`.
pub fn train_bcft(logs: &[ShiftLog], cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let corpus = prepare(logs)?;
    let (train, held) = split_shifts(corpus.shifts.len(), cfg.heldout_fraction, seed);
    let top = top_shifts(&corpus, &train, cfg.bcft_top_fraction)?;
    let phases = if top.len() == train.len() {
        vec![bc_phase(&corpus, &train, &held, cfg.epochs + cfg.finetune_epochs)]
    } else {
        let cutoff = top.iter().map(|&s| corpus.shifts[s].1).fold(f64::INFINITY, f64::min);
        let held_top: Vec<usize> = held.iter().copied().filter(|&s| corpus.shifts[s].1 >= cutoff).collect();
        vec![
            bc_phase(&corpus, &train, &held, cfg.epochs),
            bc_phase(&corpus, &top, &held_top, cfg.finetune_epochs),
        ]
    };
    let (policy, metrics, early_stop_epoch) = optimize(init_policy(cfg, seed), &corpus.samples, &phases, cfg, seed)?;
    Ok(TrainOutcome {
        policy,
        value: None,
        metrics,
        early_stop_epoch,
    })
}

/// Offline actor-critic: fits a linear value baseline to Monte-Carlo returns,
/// then minimises `-mean((A + alpha) log pi(a|s))` with `A = G - V(s)` held
/// constant.
///
/// With standardized advantages some weights are negative and the loss is
/// unbounded below, so the held-out criterion keeps only the non-negative
/// weights: it asks how well the policy explains the better-than-expected
/// held-out decisions, and stops once that degrades.
pub fn train_offline_ac(logs: &[ShiftLog], cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let corpus = prepare(logs)?;
    let (train, held) = split_shifts(corpus.shifts.len(), cfg.heldout_fraction, seed);
    let train_logs: Vec<&ShiftLog> = train.iter().map(|&s| &logs[s]).collect();
    let value = ValueModel::fit_logs(&train_logs, cfg.gamma, cfg.value_ridge)?;

    let returns: Vec<_> = logs.iter().map(|l| compute_returns(l, &value, cfg.gamma)).collect();
    let train_returns: Vec<_> = train.iter().map(|&s| returns[s].clone()).collect();
    let scale = if cfg.standardize_advantages {
        AdvantageScale::fit(&train_returns)
    } else {
        AdvantageScale { mean: 0.0, std: 1.0 }
    };
    let weight = |a: f64| {
        let a_hat = if cfg.standardize_advantages { scale.apply(a) } else { a };
        a_hat + cfg.alpha
    };
    let ac_train: Vec<(usize, f64, f64)> = train
        .iter()
        .flat_map(|&s| {
            let range = corpus.shifts[s].0.clone();
            let adv = &returns[s].advantages;
            range.zip(adv.iter()).map(move |(i, &a)| (i, weight(a), a))
        })
        .collect();
    let ac_held: Vec<(usize, f64)> = held
        .iter()
        .flat_map(|&s| {
            let range = corpus.shifts[s].0.clone();
            let adv = &returns[s].advantages;
            range.zip(adv.iter()).map(move |(i, &a)| (i, weight(a).max(0.0)))
        })
        .collect();

    let mut phases = Vec::new();
    if cfg.ac_warm_start_epochs > 0 {
        phases.push(bc_phase(&corpus, &train, &held, cfg.ac_warm_start_epochs));
    }
    phases.push(Phase {
        epochs: cfg.epochs,
        train: ac_train,
        heldout: ac_held,
    });
    let (policy, metrics, early_stop_epoch) = optimize(init_policy(cfg, seed), &corpus.samples, &phases, cfg, seed)?;
    Ok(TrainOutcome {
        policy,
        value: Some(value),
        metrics,
        early_stop_epoch,
    })
}

pub fn train(method: Method, logs: &[ShiftLog], cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    match method {
        Method::Bc => train_bc(logs, cfg, seed),
        Method::Bcft => train_bcft(logs, cfg, seed),
        Method::Ac => train_offline_ac(logs, cfg, seed),
    }
}

/// Featurizes every tick of `logs` (exposed for gradient checks and tools).
pub fn samples_from_logs(logs: &[ShiftLog]) -> Result<Vec<Sample>> {
    Ok(prepare(logs)?.samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{NoReallocation, ScriptedManager, ScriptedManagerConfig};
    use crate::sim::{generate_scenario, run_episode, EpisodeOptions, ScenarioParams, SimConfig};

    fn corpus(n: u64, noop: bool) -> Vec<ShiftLog> {
        let base = SimConfig::with_lines(2);
        let params = ScenarioParams {
            n_workers: 14,
            ..Default::default()
        };
        (0..n)
            .map(|s| {
                let (c, init) = generate_scenario(&base, &params, s);
                let opts = EpisodeOptions {
                    ticks: Some(12),
                    ..Default::default()
                };
                if noop {
                    run_episode(&init, &NoReallocation, &c, s, &opts).unwrap()
                } else {
                    let m = ScriptedManager::for_shift(&ScriptedManagerConfig::default(), s);
                    run_episode(&init, &m, &c, s, &opts).unwrap()
                }
            })
            .collect()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 6,
            finetune_epochs: 3,
            batch_size: 16,
            learning_rate: 0.05,
            ..Default::default()
        }
    }

    #[test]
    fn split_is_disjoint_and_covering() {
        let (t, h) = split_shifts(10, 0.2, 3);
        assert_eq!(h.len(), 2);
        let mut all: Vec<usize> = t.iter().chain(&h).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_shifts(1, 0.5, 0).1.len(), 0);
    }

    #[test]
    fn bc_on_noop_corpus_decodes_empty() {
        let logs = corpus(10, true);
        let out = train_bc(&logs, &quick(), 1).unwrap();
        let samples = samples_from_logs(&logs).unwrap();
        let empty = samples
            .iter()
            .filter(|s| out.policy.decode(&s.feats).is_empty())
            .count();
        assert!(empty as f64 >= 0.99 * samples.len() as f64);
        let first = &out.metrics[0];
        let last = out.metrics.last().unwrap();
        assert!(last.heldout_ll > first.heldout_ll);
    }

    #[test]
    fn training_is_deterministic() {
        let logs = corpus(6, false);
        let a = train_offline_ac(&logs, &quick(), 9).unwrap();
        let b = train_offline_ac(&logs, &quick(), 9).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn bcft_with_full_fraction_is_extended_bc() {
        let logs = corpus(8, false);
        let mut cfg = quick();
        cfg.bcft_top_fraction = 1.0;
        let ft = train_bcft(&logs, &cfg, 4).unwrap();
        let mut ext = cfg.clone();
        ext.epochs += ext.finetune_epochs;
        let bc = train_bc(&logs, &ext, 4).unwrap();
        assert_eq!(ft.policy, bc.policy);
    }

    #[test]
    fn bcft_empty_subset_is_an_error() {
        let logs = corpus(3, false);
        let mut cfg = quick();
        cfg.bcft_top_fraction = 0.1;
        assert!(matches!(train_bcft(&logs, &cfg, 0), Err(Error::EmptySubset { .. })));
    }

    #[test]
    fn top_subset_beats_corpus_mean() {
        let logs = corpus(20, false);
        let c = prepare(&logs).unwrap();
        let all: Vec<usize> = (0..20).collect();
        let top = top_shifts(&c, &all, 0.25).unwrap();
        assert_eq!(top.len(), 5);
        let mean = |ix: &[usize]| ix.iter().map(|&s| c.shifts[s].1).sum::<f64>() / ix.len() as f64;
        assert!(mean(&top) >= mean(&all));
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(train_bc(&[], &quick(), 0), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn config_validation_reports_fields() {
        let cfg = TrainConfig {
            alpha: -1.0,
            bcft_top_fraction: 0.0,
            gamma: 0.0,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(e)) if e.len() == 3));
    }
}
