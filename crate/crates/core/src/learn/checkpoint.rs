use std::path::Path;

use serde::{Deserialize, Serialize};

use super::policy::FactorizedPolicy;
use super::train::{Method, TrainConfig};
use super::value::ValueModel;
use crate::error::{Error, Result};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// A flat array with its row-major shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self { shape, data }
    }

    fn check(&self, name: &str, shape: &[usize]) -> Result<()> {
        let n: usize = self.shape.iter().product();
        if self.shape != shape || self.data.len() != n {
            return Err(Error::Data(format!(
                "checkpoint tensor {name}: shape {:?} with {} values, expected {:?}",
                self.shape,
                self.data.len(),
                shape
            )));
        }
        if self.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data(format!("checkpoint tensor {name} has non-finite values")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ValueTensors {
    w: Tensor,
    b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointFile {
    schema_version: u32,
    method: Method,
    w_q: Tensor,
    w_k: Tensor,
    temperature: f64,
    stay_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value_model: Option<ValueTensors>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train_config: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub method: Method,
    pub policy: FactorizedPolicy,
    pub value: Option<ValueModel>,
    pub train_config: Option<TrainConfig>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let p = &self.policy;
        let file = CheckpointFile {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            method: self.method,
            w_q: Tensor::new(vec![p.dim, p.d_k], p.w_q.clone()),
            w_k: Tensor::new(vec![p.dim, p.d_k], p.w_k.clone()),
            temperature: p.temperature,
            stay_threshold: p.stay_threshold,
            value_model: self.value.as_ref().map(|v| ValueTensors {
                w: Tensor::new(vec![v.w.len()], v.w.clone()),
                b: v.b,
            }),
            train_config: self.train_config.clone(),
        };
        serde_json::to_string_pretty(&file).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: CheckpointFile = serde_json::from_str(text)?;
        if f.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Data(format!(
                "checkpoint schema_version {} (supported: {CHECKPOINT_SCHEMA_VERSION})",
                f.schema_version
            )));
        }
        let dim = super::features::FEATURE_DIM;
        let d_k = f.w_q.shape.get(1).copied().unwrap_or(0);
        f.w_q.check("w_q", &[dim, d_k])?;
        f.w_k.check("w_k", &[dim, d_k])?;
        if !(f.temperature > 0.0 && f.temperature.is_finite()) {
            return Err(Error::Data("checkpoint temperature must be positive".into()));
        }
        let value = match f.value_model {
            Some(v) => {
                v.w.check("value_model.w", &[super::features::GLOBAL_FEATURE_DIM])?;
                Some(ValueModel { w: v.w.data, b: v.b })
            }
            None => None,
        };
        Ok(Self {
            method: f.method,
            policy: FactorizedPolicy {
                dim,
                d_k,
                w_q: f.w_q.data,
                w_k: f.w_k.data,
                temperature: f.temperature,
                stay_threshold: f.stay_threshold,
            },
            value,
            train_config: f.train_config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
