//! Synthetic historical corpora: scripted-manager shifts on random scenarios.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{ScriptedManager, ScriptedManagerConfig};
use crate::error::Result;
use crate::seed;
use crate::sim::{generate_scenario, run_episode, EpisodeOptions, ScenarioParams, ShiftLog, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub config: SimConfig,
    pub scenario: ScenarioParams,
    pub manager: ScriptedManagerConfig,
    /// Shift ids are `<prefix>-<index>`; the prefix also names the seed stream,
    /// so training and evaluation corpora from one root seed never overlap.
    pub prefix: String,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            config: SimConfig::default(),
            scenario: ScenarioParams::default(),
            manager: ScriptedManagerConfig::default(),
            prefix: "train".into(),
        }
    }
}

impl CorpusSpec {
    pub fn shift_seed(&self, root: u64, index: usize) -> u64 {
        seed::derive(root, &self.prefix, index as u64)
    }

    pub fn shift(&self, root: u64, index: usize) -> Result<ShiftLog> {
        let s = self.shift_seed(root, index);
        let (config, initial) = generate_scenario(&self.config, &self.scenario, s);
        let manager = ScriptedManager::for_shift(&self.manager, s);
        let opts = EpisodeOptions {
            shift_id: format!("{}-{index:05}", self.prefix),
            ..Default::default()
        };
        run_episode(&initial, &manager, &config, s, &opts)
    }
}

/// `n` shifts in index order. Deterministic for any thread count.
pub fn generate_corpus(spec: &CorpusSpec, n: usize, root_seed: u64) -> Result<Vec<ShiftLog>> {
    spec.config.validate()?;
    spec.manager.validate()?;
    (0..n).into_par_iter().map(|i| spec.shift(root_seed, i)).collect()
}
