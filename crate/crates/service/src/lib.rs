//! Session-oriented HTTP API for the manager console.
//!
//! Each session is a live episode. Clients read the state, ask for two
//! suggested actions scored by a short deterministic rollout, and submit a
//! choice or their own action. Choices made against a pending suggestion pair
//! are recorded as preference pairs with provenance `"human"`.

mod api;
mod session;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sortflow::prefgen::{Continuation, DEFAULT_HORIZON};
use sortflow::sim::{ScenarioParams, SimConfig};

pub use api::{router, ApiError, AppState};
pub use session::{
    Candidate, HumanPreference, Session, SessionError, SubmitRequest, SubmitResponse, Suggestions, HUMAN_SOURCE,
};

pub const PORT_ENV: &str = "SORTFLOW_PORT";
pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    /// Default simulator config for new sessions.
    pub sim: SimConfig,
    pub scenario: ScenarioParams,
    /// Rollout length used to score suggestions.
    pub horizon: u32,
    pub continuation: Continuation,
    /// Trained policy checkpoint for the first suggestion; without one the
    /// first suggestion keeps current staffing.
    pub checkpoint: Option<PathBuf>,
    pub host: String,
    pub port: u16,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            scenario: ScenarioParams::default(),
            horizon: DEFAULT_HORIZON,
            continuation: Continuation::default(),
            checkpoint: None,
            host: "127.0.0.1".into(),
            port: DEFAULT_PORT,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> sortflow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// The configured port unless `SORTFLOW_PORT` holds a valid one.
    pub fn resolved_port(&self, env: Option<&str>) -> u16 {
        env.and_then(|v| v.trim().parse().ok()).unwrap_or(self.port)
    }
}

/// Binds and serves until the process is stopped.
pub async fn serve(config: ServiceConfig) -> sortflow::Result<()> {
    let port = config.resolved_port(std::env::var(PORT_ENV).ok().as_deref());
    let addr = format!("{}:{}", config.host, port);
    let state = AppState::new(config)?;
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}
