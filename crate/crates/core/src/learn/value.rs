use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::features::{global_features, GLOBAL_FEATURE_DIM};
use crate::error::{Error, Result};
use crate::sim::{ShiftLog, SimConfig, SystemState};

/// Linear state-value baseline `V(s) = w . phi(s) + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueModel {
    pub w: Vec<f64>,
    pub b: f64,
}

impl Default for ValueModel {
    fn default() -> Self {
        Self::zero()
    }
}

impl ValueModel {
    pub fn zero() -> Self {
        Self {
            w: vec![0.0; GLOBAL_FEATURE_DIM],
            b: 0.0,
        }
    }

    pub fn predict_features(&self, phi: &[f64]) -> f64 {
        self.b + self.w.iter().zip(phi).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn predict(&self, state: &SystemState, config: &SimConfig) -> f64 {
        self.predict_features(&global_features(state, config))
    }

    /// Ridge-stabilised least squares of `targets` on `rows`. The intercept is
    /// not penalised.
    pub fn fit(rows: &[Vec<f64>], targets: &[f64], ridge: f64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let n = rows.len();
        let d = rows[0].len();
        let x = DMatrix::from_fn(n, d + 1, |i, j| if j == d { 1.0 } else { rows[i][j] });
        let y = DVector::from_column_slice(targets);
        let mut xtx = x.transpose() * &x;
        for j in 0..d {
            xtx[(j, j)] += ridge * n as f64;
        }
        let xty = x.transpose() * y;
        let sol = xtx
            .clone()
            .cholesky()
            .map(|c| c.solve(&xty))
            .or_else(|| xtx.svd(true, true).solve(&xty, 1e-12).ok())
            .ok_or_else(|| Error::Divergence {
                epoch: 0,
                detail: "value fit: singular normal equations".into(),
            })?;
        let w = sol.rows(0, d).iter().copied().collect();
        Ok(Self { w, b: sol[d] })
    }

    /// Fits `V` to the Monte-Carlo returns of every tick in `logs`.
    pub fn fit_logs(logs: &[&ShiftLog], gamma: f64, ridge: f64) -> Result<Self> {
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for log in logs {
            let rewards: Vec<f64> = log.records.iter().map(|r| r.reward).collect();
            for (t, g) in mc_returns(&rewards, gamma).into_iter().enumerate() {
                rows.push(global_features(&log.states[t], &log.config));
                ys.push(g);
            }
        }
        Self::fit(&rows, &ys, ridge)
    }
}

pub fn mc_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut g = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        g[t] = acc;
    }
    g
}

/// Per-tick rewards, returns, baseline values and advantages of one shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReturns {
    pub rewards: Vec<f64>,
    pub returns: Vec<f64>,
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
}

pub fn compute_returns(log: &ShiftLog, value: &ValueModel, gamma: f64) -> TrajectoryReturns {
    let rewards: Vec<f64> = log.records.iter().map(|r| r.reward).collect();
    let returns = mc_returns(&rewards, gamma);
    let values: Vec<f64> = (0..rewards.len())
        .map(|t| value.predict(&log.states[t], &log.config))
        .collect();
    let advantages = returns.iter().zip(&values).map(|(g, v)| g - v).collect();
    TrajectoryReturns {
        rewards,
        returns,
        values,
        advantages,
    }
}

/// Mean and standard deviation used to standardize advantages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvantageScale {
    pub mean: f64,
    pub std: f64,
}

impl AdvantageScale {
    pub fn fit(batch: &[TrajectoryReturns]) -> Self {
        let all: Vec<f64> = batch.iter().flat_map(|r| r.advantages.iter().copied()).collect();
        if all.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }

    /// A (numerically) constant batch maps to all zeros.
    pub fn apply(&self, a: f64) -> f64 {
        if self.std <= 1e-12 * self.mean.abs().max(1.0) {
            0.0
        } else {
            (a - self.mean) / self.std
        }
    }
}

/// Rescales advantages across a batch of shifts to mean 0, std 1.
pub fn standardize_advantages(batch: &mut [TrajectoryReturns]) -> AdvantageScale {
    let scale = AdvantageScale::fit(batch);
    for r in batch.iter_mut() {
        for a in r.advantages.iter_mut() {
            *a = scale.apply(*a);
        }
    }
    scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn return_recursion() {
        assert_eq!(mc_returns(&[1.0, 1.0, 1.0], 1.0), vec![3.0, 2.0, 1.0]);
        assert_eq!(mc_returns(&[2.0, 4.0], 0.5), vec![4.0, 4.0]);
    }

    #[test]
    fn least_squares_recovers_linear_target() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, (i * i % 7) as f64]).collect();
        let ys: Vec<f64> = rows.iter().map(|r| 3.0 * r[0] - 2.0 * r[1] + 5.0).collect();
        let v = ValueModel::fit(&rows, &ys, 0.0).unwrap();
        assert!((v.w[0] - 3.0).abs() < 1e-8 && (v.w[1] + 2.0).abs() < 1e-8 && (v.b - 5.0).abs() < 1e-8);
    }

    #[test]
    fn standardization() {
        let mk = |a: Vec<f64>| TrajectoryReturns {
            rewards: vec![],
            returns: vec![],
            values: vec![],
            advantages: a,
        };
        let mut b = vec![mk(vec![1.0, 2.0]), mk(vec![3.0])];
        standardize_advantages(&mut b);
        let all: Vec<f64> = b.iter().flat_map(|r| r.advantages.clone()).collect();
        assert!(all.iter().sum::<f64>().abs() < 1e-12);
        assert!((all.iter().map(|a| a * a).sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);
        let mut c = vec![mk(vec![4.0, 4.0])];
        standardize_advantages(&mut c);
        assert_eq!(c[0].advantages, vec![0.0, 0.0]);
    }
}
