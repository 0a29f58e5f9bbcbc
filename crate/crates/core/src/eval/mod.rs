//! Evaluation against replayed historical decisions, bootstrap intervals,
//! calibration metrics and simulator parameter search.

mod calibrate;
mod replay;
mod stats;

pub use calibrate::{calibrate, with_params_of, CalibParam, CalibrationReport, SearchAxis, SearchSpace};
pub use replay::{
    compare_logs, evaluate, metric_wapes, replay, rollout_like, scatter_export, scatter_from, shift_hours, EvalReport,
    MethodResult, MetricWape, Scatter, ScatterPoint, BUFFER_STATE_INDEX, EVAL_NOTE, METRIC_NAMES,
};
pub use stats::{improvement, r_squared, wape, Improvement, Wape};
