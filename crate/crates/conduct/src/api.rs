use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::Response;
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{NaiveDate, SecondsFormat, Utc};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::{ApiError, ApiResult};
use crate::store::{LogEntry, Store};
use crate::trial::{Enrollment, TrialConfig};

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    /// Bearer token required on every request when set.
    pub token: Option<String>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/trials", post(create_trial).get(list_trials))
        .route("/trials/{id}", get(trial_summary))
        .route("/trials/{id}/patients", post(enroll))
        .route("/trials/{id}/patients/{pid}/event", post(record_event))
        .route("/trials/{id}/recommendation", get(recommendation))
        .route("/trials/{id}/history", get(history))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Result<Response, ApiError> {
    if let Some(token) = &state.token {
        let given = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(token.as_str()) {
            return Err(ApiError::Unauthorized);
        }
    }
    Ok(next.run(req).await)
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ApiError::Validation(e.body_text()))
}

async fn create_trial(
    State(state): State<AppState>,
    payload: Result<Json<TrialConfig>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let config = body(payload)?;
    let id = state.store.create(config, now()).await?;
    Ok((StatusCode::CREATED, Json(json!({ "trial_id": id }))))
}

async fn list_trials(State(state): State<AppState>) -> Json<Value> {
    Json(json!({ "trials": state.store.ids().await }))
}

async fn trial_summary(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let slot = state.store.get(&id).await?;
    let slot = slot.lock().await;
    let t = &slot.trial;
    Ok(Json(json!({
        "trial_id": t.id,
        "config": t.config,
        "current_dose": t.state.current_dose + 1,
        "patients": t.patients(),
        "decisions": t.decisions.len(),
    })))
}

async fn enroll(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<Enrollment>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let enrollment = body(payload)?;
    let slot = state.store.get(&id).await?;
    let mut slot = slot.lock().await;
    slot.commit(LogEntry::Enrolled { at: now(), enrollment })?;
    let patient = slot.trial.patients().pop().expect("just enrolled");
    Ok((StatusCode::CREATED, Json(serde_json::to_value(patient)?)))
}

#[derive(Deserialize)]
struct EventBody {
    date: NaiveDate,
}

async fn record_event(
    State(state): State<AppState>,
    Path((id, pid)): Path<(String, usize)>,
    payload: Result<Json<EventBody>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let EventBody { date } = body(payload)?;
    let slot = state.store.get(&id).await?;
    let mut slot = slot.lock().await;
    slot.commit(LogEntry::Event {
        at: now(),
        patient_id: pid,
        date,
    })?;
    let patient = slot.trial.patients().swap_remove(pid - 1);
    Ok(Json(serde_json::to_value(patient)?))
}

#[derive(Deserialize)]
struct AsOf {
    asof: NaiveDate,
}

/// Computes the decision at `asof` and appends it to the trial's log.
async fn recommendation(
    State(state): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<AsOf>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let AsOf { asof } = query
        .map(|Query(q)| q)
        .map_err(|e| ApiError::Validation(e.body_text()))?;
    let slot = state.store.get(&id).await?;
    // held across the sampler run so decisions on one trial are serialized
    let mut slot = slot.lock().await;
    let trial = slot.trial.clone();
    let (rec, snapshot) = tokio::task::spawn_blocking(move || trial.recommend(asof))
        .await
        .map_err(|e| ApiError::Internal(format!("sampler task failed: {e}")))??;
    slot.commit(LogEntry::Decision {
        at: now(),
        recommendation: rec.clone(),
        snapshot,
    })?;
    Ok(Json(serde_json::to_value(rec)?))
}

async fn history(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let slot = state.store.get(&id).await?;
    let slot = slot.lock().await;
    Ok(Json(json!({ "trial_id": id, "decisions": slot.trial.decisions })))
}
