//! Online localization service: fingerprint collection, per-device
//! tracking with area smoothing, prediction history and atomic model
//! retraining behind a small JSON HTTP API.

mod api;
pub mod config;
pub mod persist;
mod state;

use std::io;
use std::sync::Arc;

use thiserror::Error;

pub use api::router;
pub use config::{ServiceConfig, ENV_PREFIX};
pub use state::{
    AppState, HistoryPage, HistoryQuery, LearnResponse, ModelInfo, PredictionRecord, TrackResponse, TrainRequest,
    TrainResponse,
};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("no model installed; POST /api/v1/train first")]
    NoModel,
    #[error("{0}")]
    BadRequest(String),
    #[error("missing or invalid bearer token")]
    Unauthorized,
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("corrupt data directory: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] wifiloc_core::Error),
    #[error("{0}")]
    Internal(String),
}

/// Opens the data directory and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let listen = config.listen.clone();
    let state = AppState::open(config)?;
    let sweeper = state::spawn_session_sweeper(Arc::downgrade(&state));
    let listener = tokio::net::TcpListener::bind(&listen).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        })
        .await?;
    sweeper.abort();
    Ok(())
}
