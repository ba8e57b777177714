use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Serialize;
use stez_core::AccountId;

use crate::snapshot::SnapshotCell;

#[derive(Debug, Serialize)]
pub struct ApiError {
    pub error: &'static str,
    pub detail: String,
    #[serde(skip)]
    status: StatusCode,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, detail: impl Into<String>) -> Self {
        ApiError {
            error,
            detail: detail.into(),
            status,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self)).into_response()
    }
}

type Cell = Arc<SnapshotCell>;

pub fn router(cell: Cell) -> Router {
    Router::new()
        .route("/ledger/state", get(ledger_state))
        .route("/ledger/validators", get(validators))
        .route("/ledger/allocations", get(allocations))
        .route("/user/{address}/balance", get(balance))
        .route("/user/{address}/tickets", get(tickets))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .with_state(cell)
}

async fn ledger_state(State(cell): State<Cell>) -> Response {
    Json(cell.load().state()).into_response()
}

async fn validators(State(cell): State<Cell>) -> Response {
    Json(cell.load().validators()).into_response()
}

async fn allocations(
    State(cell): State<Cell>,
    query: Result<Query<HashMap<String, String>>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(query) = query.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text()))?;
    let raw = query
        .get("cycle")
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "missing query parameter cycle"))?;
    let cycle: u64 = raw
        .parse()
        .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", format!("cycle {raw:?} is not an integer")))?;
    let snapshot = cell.load();
    match snapshot.allocation(cycle) {
        Some(plan) => Ok(Json(plan).into_response()),
        None => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("no allocation plan for cycle {cycle}"),
        )),
    }
}

async fn balance(State(cell): State<Cell>, Path(address): Path<String>) -> Response {
    Json(cell.load().balance(&AccountId::new(address))).into_response()
}

async fn tickets(State(cell): State<Cell>, Path(address): Path<String>) -> Response {
    Json(cell.load().tickets(&AccountId::new(address))).into_response()
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "the query service is read-only")
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    cell: Cell,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(cell)).with_graceful_shutdown(shutdown).await
}
