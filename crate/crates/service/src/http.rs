//! HTTP/1.1 JSON API under `/v1`.
//!
//! | method | path | role |
//! |---|---|---|
//! | POST | /v1/rounds | coordinator |
//! | GET | /v1/rounds/current | any |
//! | POST | /v1/rounds/close | coordinator |
//! | POST | /v1/sessions | annotator |
//! | GET | /v1/sessions/{id}/next | session owner |
//! | POST | /v1/sessions/{id}/labels | session owner |
//! | POST | /v1/exemplars | annotator |
//! | GET | /v1/agreement | any |
//! | GET | /v1/progress | any |
//!
//! Every request carries `Authorization: Bearer TOKEN`. Errors come back as
//! `{"kind": ..., "message": ...}` with a matching status code.

use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::config::Principal;
use crate::error::ServiceError;
use crate::service::{ExemplarSubmission, LabelSubmission, OpenRoundRequest, Service};

pub type Shared = Arc<RwLock<Service>>;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.kind.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ServiceError>;

fn principal(service: &Service, headers: &HeaderMap) -> Result<Principal, ServiceError> {
    let token = headers
        .get(axum::http::header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or_else(|| ServiceError::new(crate::error::ErrorKind::Unauthorized, "missing bearer token"))?;
    service.context().authenticate(token.trim())
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ServiceError::bad_request(e.body_text()))
}

fn read(shared: &Shared) -> std::sync::RwLockReadGuard<'_, Service> {
    shared.read().unwrap_or_else(|p| p.into_inner())
}

fn write(shared: &Shared) -> std::sync::RwLockWriteGuard<'_, Service> {
    shared.write().unwrap_or_else(|p| p.into_inner())
}

async fn open_round(
    State(s): State<Shared>,
    headers: HeaderMap,
    payload: Result<Json<OpenRoundRequest>, JsonRejection>,
) -> ApiResult<crate::service::RoundStatus> {
    let mut svc = write(&s);
    let who = principal(&svc, &headers)?;
    Ok(Json(svc.open_round(&who, body(payload)?)?))
}

async fn current_round(State(s): State<Shared>, headers: HeaderMap) -> ApiResult<Option<crate::service::RoundStatus>> {
    let svc = read(&s);
    principal(&svc, &headers)?;
    Ok(Json(svc.current_round()))
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloseRequest {
    #[serde(default)]
    pub force: bool,
}

async fn close_round(
    State(s): State<Shared>,
    headers: HeaderMap,
    payload: Option<Json<CloseRequest>>,
) -> ApiResult<crate::service::CloseSummary> {
    let mut svc = write(&s);
    let who = principal(&svc, &headers)?;
    let force = payload.is_some_and(|Json(c)| c.force);
    Ok(Json(svc.close_round(&who, force)?))
}

async fn start_session(State(s): State<Shared>, headers: HeaderMap) -> ApiResult<crate::service::Session> {
    let mut svc = write(&s);
    let who = principal(&svc, &headers)?;
    Ok(Json(svc.start_session(&who)?))
}

async fn next_document(
    State(s): State<Shared>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<crate::service::NextDocument> {
    let svc = read(&s);
    let who = principal(&svc, &headers)?;
    Ok(Json(svc.next_document(&who, &id)?))
}

async fn submit_label(
    State(s): State<Shared>,
    headers: HeaderMap,
    Path(id): Path<String>,
    payload: Result<Json<LabelSubmission>, JsonRejection>,
) -> ApiResult<crate::service::LabelAck> {
    let mut svc = write(&s);
    let who = principal(&svc, &headers)?;
    Ok(Json(svc.submit_label(&who, &id, body(payload)?)?))
}

async fn submit_exemplar(
    State(s): State<Shared>,
    headers: HeaderMap,
    payload: Result<Json<ExemplarSubmission>, JsonRejection>,
) -> ApiResult<crate::service::ExemplarAck> {
    let mut svc = write(&s);
    let who = principal(&svc, &headers)?;
    Ok(Json(svc.submit_exemplar(&who, body(payload)?)?))
}

async fn agreement(
    State(s): State<Shared>,
    headers: HeaderMap,
) -> ApiResult<stancekit::annotation::AgreementSummary> {
    let svc = read(&s);
    principal(&svc, &headers)?;
    Ok(Json(svc.agreement()))
}

async fn progress(State(s): State<Shared>, headers: HeaderMap) -> ApiResult<crate::service::Progress> {
    let svc = read(&s);
    principal(&svc, &headers)?;
    Ok(Json(svc.progress()))
}

async fn fallback() -> ServiceError {
    ServiceError::not_found("no such endpoint")
}

pub fn router(shared: Shared) -> Router {
    Router::new()
        .route("/v1/rounds", post(open_round))
        .route("/v1/rounds/current", get(current_round))
        .route("/v1/rounds/close", post(close_round))
        .route("/v1/sessions", post(start_session))
        .route("/v1/sessions/{id}/next", get(next_document))
        .route("/v1/sessions/{id}/labels", post(submit_label))
        .route("/v1/exemplars", post(submit_exemplar))
        .route("/v1/agreement", get(agreement))
        .route("/v1/progress", get(progress))
        .fallback(fallback)
        .with_state(shared)
}

/// Binds `listen` and serves until the process is stopped.
pub async fn serve(service: Service, listen: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(RwLock::new(service)))).await
}
