//! Offline learning of the factorized reallocation policy: features, the
//! policy head with analytic gradients, the linear value baseline, and the
//! behavior cloning / fine-tuned cloning / actor-critic trainers.

mod checkpoint;
mod features;
mod policy;
mod train;
mod value;

pub use checkpoint::{Checkpoint, Tensor, CHECKPOINT_SCHEMA_VERSION};
pub use features::{
    featurize, global_features, position_layout, PositionFeatures, FEATURE_DIM, FEATURE_NAMES, GLOBAL_FEATURE_DIM,
};
pub use policy::{FactorizedPolicy, SampledPolicy, SlotDistribution, DEFAULT_KEY_DIM, STAY_THRESHOLD};
pub use train::{
    metrics_csv, samples_from_logs, split_shifts, train, train_bc, train_bcft, train_offline_ac,
    weighted_nll_and_gradient, EpochMetrics, Method, Sample, TrainConfig, TrainOutcome,
};
pub use value::{compute_returns, mc_returns, standardize_advantages, AdvantageScale, TrajectoryReturns, ValueModel};
