use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde_json::json;
use wifiloc_core::fingerprint::io::ScanRecord;

use crate::state::{AppState, HistoryQuery, TrainRequest};
use crate::ServiceError;

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NoModel => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::BadRequest(_) | ServiceError::Json(_) => StatusCode::BAD_REQUEST,
            ServiceError::Unauthorized => StatusCode::UNAUTHORIZED,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("invalid JSON body: {e}")))
}

async fn track(State(s): State<Arc<AppState>>, body: Bytes) -> Result<Response, ServiceError> {
    let record: ScanRecord = parse(&body)?;
    Ok(Json(s.track(record).await?).into_response())
}

async fn learn(State(s): State<Arc<AppState>>, body: Bytes) -> Result<Response, ServiceError> {
    let record: ScanRecord = parse(&body)?;
    Ok(Json(s.learn(record).await?).into_response())
}

async fn train(State(s): State<Arc<AppState>>, body: Bytes) -> Result<Response, ServiceError> {
    let request: TrainRequest = if body.iter().all(u8::is_ascii_whitespace) {
        TrainRequest::default()
    } else {
        parse(&body)?
    };
    Ok(Json(s.train(request).await?).into_response())
}

async fn history(State(s): State<Arc<AppState>>, query: Result<Query<HistoryQuery>, axum::extract::rejection::QueryRejection>) -> Result<Response, ServiceError> {
    let Query(q) = query.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    Ok(Json(s.history(&q)?).into_response())
}

async fn model(State(s): State<Arc<AppState>>) -> Result<Response, ServiceError> {
    Ok(Json(s.model_info()?).into_response())
}

async fn healthz(State(s): State<Arc<AppState>>) -> Response {
    Json(json!({
        "status": "ok",
        "model_version": s.model_version(),
        "training": s.is_training(),
    }))
    .into_response()
}

async fn require_token(State(s): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &s.config().token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ServiceError::Unauthorized.into_response();
        }
    }
    next.run(req).await
}

/// `/api/v1/*` routes plus an unauthenticated `/healthz`.
pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/track", post(track))
        .route("/learn", post(learn))
        .route("/train", post(train))
        .route("/history", get(history))
        .route("/model", get(model))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .nest("/api/v1", api)
        .route("/healthz", get(healthz))
        .with_state(state)
}
