use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::{featurize, PositionFeatures, FEATURE_DIM};
use crate::agents::{Policy, PolicyDecision, WorkerDistribution};
use crate::error::{Error, Result};
use crate::seed;
use crate::sim::{Action, Move, SimConfig, Station, SystemState, WorkerId};

pub const STAY_THRESHOLD: f64 = 0.1;
pub const DEFAULT_KEY_DIM: usize = 8;

/// Log-linear factorized reallocation head. Each occupied position `p`
/// scores every valid destination `d` with `(W_q^T f_p) . (W_k^T f_d) / tau`
/// and takes a softmax; destination `p` itself means "stay".
///
/// Parameters are flat: `w_q` then `w_k`, each row-major `dim x d_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizedPolicy {
    pub dim: usize,
    pub d_k: usize,
    pub w_q: Vec<f64>,
    pub w_k: Vec<f64>,
    pub temperature: f64,
    pub stay_threshold: f64,
}

/// Softmax over one occupied position's destinations (`dests[0]` is stay).
#[derive(Debug, Clone, PartialEq)]
pub struct SlotDistribution {
    pub position: usize,
    pub dests: Vec<usize>,
    pub probs: Vec<f64>,
}

impl SlotDistribution {
    pub fn stay(&self) -> f64 {
        self.probs[0]
    }
}

fn log_softmax_in_place(z: &mut [f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    for v in z.iter_mut() {
        *v -= lse;
    }
    lse
}

impl FactorizedPolicy {
    pub fn zeros(d_k: usize) -> Self {
        Self {
            dim: FEATURE_DIM,
            d_k,
            w_q: vec![0.0; FEATURE_DIM * d_k],
            w_k: vec![0.0; FEATURE_DIM * d_k],
            temperature: 1.0,
            stay_threshold: STAY_THRESHOLD,
        }
    }

    /// Uniform entries in `[-scale, scale]`. All-zero weights are a saddle
    /// point of the likelihood, so training starts from a small random draw.
    pub fn random(d_k: usize, scale: f64, seed: u64) -> Self {
        let mut rng = seed::rng(seed::derive(seed, "policy_init", 0));
        let mut p = Self::zeros(d_k);
        for w in p.w_q.iter_mut().chain(p.w_k.iter_mut()) {
            *w = rng.gen_range(-scale..=scale);
        }
        p
    }

    pub fn n_params(&self) -> usize {
        self.w_q.len() + self.w_k.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = self.w_q.clone();
        v.extend_from_slice(&self.w_k);
        v
    }

    pub fn set_params(&mut self, theta: &[f64]) {
        let n = self.w_q.len();
        self.w_q.copy_from_slice(&theta[..n]);
        self.w_k.copy_from_slice(&theta[n..]);
    }

    pub fn is_finite(&self) -> bool {
        self.w_q.iter().chain(&self.w_k).all(|w| w.is_finite()) && self.temperature.is_finite()
    }

    fn project(&self, feats: &PositionFeatures, w: &[f64]) -> Vec<f64> {
        let (d, dk) = (self.dim, self.d_k);
        let n = feats.n_positions();
        let mut out = vec![0.0; n * dk];
        for p in 0..n {
            let f = feats.row(p);
            let o = &mut out[p * dk..(p + 1) * dk];
            for i in 0..d {
                let fi = f[i];
                if fi == 0.0 {
                    continue;
                }
                for (oj, wj) in o.iter_mut().zip(&w[i * dk..(i + 1) * dk]) {
                    *oj += fi * wj;
                }
            }
        }
        out
    }

    fn logits(&self, q: &[f64], k: &[f64], p: usize, dests: &[usize]) -> Vec<f64> {
        let dk = self.d_k;
        let qp = &q[p * dk..(p + 1) * dk];
        dests
            .iter()
            .map(|&d| qp.iter().zip(&k[d * dk..(d + 1) * dk]).map(|(a, b)| a * b).sum::<f64>() / self.temperature)
            .collect()
    }

    /// Per occupied position (in `feats.occupied` order) destination softmax.
    pub fn distributions(&self, feats: &PositionFeatures) -> Vec<SlotDistribution> {
        let q = self.project(feats, &self.w_q);
        let k = self.project(feats, &self.w_k);
        feats
            .occupied
            .iter()
            .map(|(p, _)| {
                let dests: Vec<usize> = feats.destinations(*p).collect();
                let mut z = self.logits(&q, &k, *p, &dests);
                log_softmax_in_place(&mut z);
                SlotDistribution {
                    position: *p,
                    dests,
                    probs: z.into_iter().map(f64::exp).collect(),
                }
            })
            .collect()
    }

    /// Index of each occupied worker's realised destination within its
    /// destination list (0 = stay). Movers into the same station take that
    /// station's vacant slots in ascending order, movers sorted by id.
    pub fn targets(feats: &PositionFeatures, action: &Action) -> Result<Vec<usize>> {
        let pos_of: BTreeMap<&WorkerId, (usize, usize)> = feats
            .occupied
            .iter()
            .enumerate()
            .map(|(i, (p, w))| (w, (i, *p)))
            .collect();
        let mut targets = vec![0usize; feats.occupied.len()];
        let mut free: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for &v in feats.vacant.iter().rev() {
            free.entry(feats.station[v]).or_default().push(v);
        }
        let mut moves: Vec<&Move> = action.moves.iter().collect();
        moves.sort_by(|a, b| a.worker_id.cmp(&b.worker_id));
        let mut seen = std::collections::BTreeSet::new();
        for m in moves {
            if !seen.insert(&m.worker_id) {
                return Err(Error::UndefinedLikelihood(format!(
                    "worker {} moved twice",
                    m.worker_id
                )));
            }
            let &(i, p) = pos_of.get(&m.worker_id).ok_or_else(|| {
                Error::UndefinedLikelihood(format!("worker {} has no position on the floor", m.worker_id))
            })?;
            if m.to == feats.station_of(p) {
                continue;
            }
            let key = (m.to.line * crate::sim::N_STAGES + m.to.stage) as u32;
            let slot = free.get_mut(&key).and_then(|s| s.pop()).ok_or_else(|| {
                Error::UndefinedLikelihood(format!(
                    "worker {} moves to {} which has no vacant slot",
                    m.worker_id, m.to
                ))
            })?;
            targets[i] = feats
                .destinations(p)
                .position(|d| d == slot)
                .expect("vacant slot at another station is a destination");
        }
        Ok(targets)
    }

    pub fn log_prob(&self, feats: &PositionFeatures, action: &Action) -> Result<f64> {
        let t = Self::targets(feats, action)?;
        Ok(self.log_prob_targets(feats, &t))
    }

    pub fn log_prob_targets(&self, feats: &PositionFeatures, targets: &[usize]) -> f64 {
        let q = self.project(feats, &self.w_q);
        let k = self.project(feats, &self.w_k);
        let mut dests = Vec::new();
        let mut lp = 0.0;
        for ((p, _), &t) in feats.occupied.iter().zip(targets) {
            dests.clear();
            dests.extend(feats.destinations(*p));
            let mut z = self.logits(&q, &k, *p, &dests);
            log_softmax_in_place(&mut z);
            lp += z[t];
        }
        lp
    }

    /// Adds `weight * d log pi(a|s) / d theta` into `grad` (layout of
    /// [`params`](Self::params)) and returns `log pi(a|s)`.
    pub fn accumulate_gradient(
        &self,
        feats: &PositionFeatures,
        targets: &[usize],
        weight: f64,
        grad: &mut [f64],
    ) -> f64 {
        let (d, dk) = (self.dim, self.d_k);
        let n = feats.n_positions();
        let q = self.project(feats, &self.w_q);
        let k = self.project(feats, &self.w_k);
        let mut gq = vec![0.0; n * dk];
        let mut gk = vec![0.0; n * dk];
        let mut lp = 0.0;
        let inv_tau = 1.0 / self.temperature;
        let mut dests = Vec::new();
        for ((p, _), &t) in feats.occupied.iter().zip(targets) {
            let p = *p;
            dests.clear();
            dests.extend(feats.destinations(p));
            let mut z = self.logits(&q, &k, p, &dests);
            log_softmax_in_place(&mut z);
            lp += z[t];
            for (j, &dst) in dests.iter().enumerate() {
                let c = (j == t) as u8 as f64 - z[j].exp();
                if c == 0.0 {
                    continue;
                }
                let c = c * inv_tau;
                for x in 0..dk {
                    gq[p * dk + x] += c * k[dst * dk + x];
                    gk[dst * dk + x] += c * q[p * dk + x];
                }
            }
        }
        let (g_wq, g_wk) = grad.split_at_mut(d * dk);
        for p in 0..n {
            let f = feats.row(p);
            for i in 0..d {
                let fi = f[i] * weight;
                if fi == 0.0 {
                    continue;
                }
                for x in 0..dk {
                    g_wq[i * dk + x] += fi * gq[p * dk + x];
                    g_wk[i * dk + x] += fi * gk[p * dk + x];
                }
            }
        }
        lp
    }

    fn resolve(feats: &PositionFeatures, dists: &[SlotDistribution], choice: &[Option<usize>]) -> Action {
        // Most confident movers first; a mover whose slot is already taken stays.
        let mut order: Vec<usize> = (0..dists.len()).filter(|&i| choice[i].is_some()).collect();
        order.sort_by(|&a, &b| dists[a].stay().total_cmp(&dists[b].stay()).then(a.cmp(&b)));
        let mut taken = std::collections::BTreeSet::new();
        let mut moves = Vec::new();
        for i in order {
            let slot = choice[i].expect("filtered");
            if taken.insert(slot) {
                moves.push(Move {
                    worker_id: feats.occupied[i].1.clone(),
                    to: feats.station_of(slot),
                });
            }
        }
        Action::new(moves)
    }

    /// Greedy decode: a worker moves only if its stay probability is below
    /// the threshold, and then to its most likely destination slot.
    pub fn decode(&self, feats: &PositionFeatures) -> Action {
        self.decode_with(feats, &self.distributions(feats))
    }

    pub fn decode_with(&self, feats: &PositionFeatures, dists: &[SlotDistribution]) -> Action {
        let choice: Vec<Option<usize>> = dists
            .iter()
            .map(|d| {
                if d.stay() >= self.stay_threshold || d.dests.len() < 2 {
                    return None;
                }
                let mut best = 1;
                for j in 2..d.dests.len() {
                    if d.probs[j] > d.probs[best] {
                        best = j;
                    }
                }
                Some(d.dests[best])
            })
            .collect();
        Self::resolve(feats, dists, &choice)
    }

    /// Samples every worker's destination from its full distribution (no
    /// threshold), resolving slot conflicts as in [`decode`](Self::decode).
    pub fn sample<R: Rng>(&self, feats: &PositionFeatures, rng: &mut R) -> Action {
        let dists = self.distributions(feats);
        let choice: Vec<Option<usize>> = dists
            .iter()
            .map(|d| {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = d.probs.len() - 1;
                for (j, p) in d.probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = j;
                        break;
                    }
                }
                (pick != 0).then(|| d.dests[pick])
            })
            .collect();
        Self::resolve(feats, &dists, &choice)
    }

    /// Station-level view of the slot distributions.
    pub fn worker_distributions(feats: &PositionFeatures, dists: &[SlotDistribution]) -> Vec<WorkerDistribution> {
        dists
            .iter()
            .zip(&feats.occupied)
            .map(|(d, (_, w))| {
                let mut by_station: BTreeMap<Station, f64> = BTreeMap::new();
                for (&dst, &p) in d.dests.iter().zip(&d.probs).skip(1) {
                    *by_station.entry(feats.station_of(dst)).or_default() += p;
                }
                WorkerDistribution {
                    worker_id: w.clone(),
                    stay: d.stay(),
                    destinations: by_station.into_iter().collect(),
                }
            })
            .collect()
    }
}

impl Policy for FactorizedPolicy {
    fn id(&self) -> String {
        "factorized".into()
    }

    fn decide(&self, state: &SystemState, config: &SimConfig) -> Result<PolicyDecision> {
        let feats = featurize(state, config);
        let dists = self.distributions(&feats);
        Ok(PolicyDecision {
            action: self.decode_with(&feats, &dists),
            per_worker_distribution: Some(Self::worker_distributions(&feats, &dists)),
            ..Default::default()
        })
    }
}

/// A trained policy in sampling mode, reseeded every tick from `seed`.
#[derive(Debug, Clone)]
pub struct SampledPolicy {
    pub policy: FactorizedPolicy,
    pub seed: u64,
}

impl Policy for SampledPolicy {
    fn id(&self) -> String {
        "factorized_sampled".into()
    }

    fn decide(&self, state: &SystemState, config: &SimConfig) -> Result<PolicyDecision> {
        let feats = featurize(state, config);
        let mut rng = seed::rng(seed::derive(self.seed, "policy_sample", state.tick as u64));
        Ok(PolicyDecision::from_action(self.policy.sample(&feats, &mut rng)))
    }
}
