use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Weighted absolute percentage error with a flag for near-zero denominators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wape {
    /// `sum |pred - actual| / sum |actual|`; infinite when the denominator is
    /// zero but the errors are not (serialized as `null`).
    pub value: f64,
    /// Mean |actual| below 1e-6: the ratio is dominated by a tiny denominator.
    pub small_denominator: bool,
}

pub fn wape(pred: &[f64], actual: &[f64]) -> Result<Wape> {
    if pred.len() != actual.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: actual.len(),
        });
    }
    let err: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum();
    let denom: f64 = actual.iter().map(|a| a.abs()).sum();
    let small = actual.is_empty() || denom / (actual.len() as f64) < 1e-6;
    let value = if denom > 0.0 {
        err / denom
    } else if err == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(Wape {
        value,
        small_denominator: small,
    })
}

/// Coefficient of determination; `None` when the actual values are constant.
pub fn r_squared(pred: &[f64], actual: &[f64]) -> Result<Option<f64>> {
    if pred.len() != actual.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: actual.len(),
        });
    }
    if actual.len() < 2 {
        return Err(Error::TooFewPoints {
            need: 2,
            got: actual.len(),
        });
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean).powi(2)).sum();
    let ss_res: f64 = pred.iter().zip(actual).map(|(p, a)| (a - p).powi(2)).sum();
    if ss_tot <= f64::EPSILON * mean.abs().max(1.0) * actual.len() as f64 {
        return Ok(None);
    }
    Ok(Some(1.0 - ss_res / ss_tot))
}

/// Relative improvement of paired per-shift outputs with a percentile
/// bootstrap interval. All values are fractions (0.05 = +5%).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

fn ratio(policy: &[f64], baseline: &[f64], idx: impl Iterator<Item = usize>) -> f64 {
    let (mut p, mut b) = (0.0, 0.0);
    for i in idx {
        p += policy[i];
        b += baseline[i];
    }
    (p - b) / b
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `(mean policy - mean baseline) / mean baseline` over paired shifts, with a
/// 95% percentile bootstrap over shifts. The interval only reflects
/// evaluation variance across the sampled shifts.
pub fn improvement(policy: &[f64], baseline: &[f64], resamples: usize, seed: u64) -> Result<Improvement> {
    if policy.len() != baseline.len() {
        return Err(Error::LengthMismatch {
            left: policy.len(),
            right: baseline.len(),
        });
    }
    let n = baseline.len();
    if n == 0 {
        return Err(Error::TooFewPoints { need: 1, got: 0 });
    }
    let total: f64 = baseline.iter().sum();
    if total == 0.0 || !total.is_finite() {
        return Err(Error::ZeroReplayMean);
    }
    let point = ratio(policy, baseline, 0..n);
    if resamples == 0 {
        return Ok(Improvement {
            point,
            lo: point,
            hi: point,
        });
    }
    let mut rng = seed::rng(seed::derive(seed, "bootstrap", 0));
    let mut stats = Vec::with_capacity(resamples);
    let mut idx = vec![0usize; n];
    for _ in 0..resamples {
        for i in idx.iter_mut() {
            *i = rng.gen_range(0..n);
        }
        let r = ratio(policy, baseline, idx.iter().copied());
        if r.is_finite() {
            stats.push(r);
        }
    }
    if stats.is_empty() {
        return Err(Error::ZeroReplayMean);
    }
    stats.sort_by(f64::total_cmp);
    let lo = quantile(&stats, 0.025).min(point);
    let hi = quantile(&stats, 0.975).max(point);
    Ok(Improvement { point, lo, hi })
}
