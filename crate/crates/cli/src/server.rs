//! HTTP front of the preference survey.
//!
//! | route                              | result                                 |
//! |------------------------------------|----------------------------------------|
//! | `POST /api/participant`            | `{"participant": token}`               |
//! | `GET /api/bundle/next?participant=`| next unanswered item, or 204 when done |
//! | `POST /api/response`               | 200, or 400 / 404 / 409                |
//! | `GET /api/results`                 | tally and test; needs the admin token  |
//!
//! Anything else falls through to the static directory, if one is given.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crowdlabel::stats::{preference_test, PreferenceCounts, TestResult, UNIFORM_NULL};
use crowdlabel::survey::{tally, Choice, ResponseLog, SurveyBundle, SurveyResponse};
use crowdlabel::Error;

pub const ADMIN_TOKEN_VAR: &str = "SURVEY_ADMIN_TOKEN";
const MAX_TOKEN_LEN: usize = 128;

pub struct AppState {
    bundle: SurveyBundle,
    log: Mutex<ResponseLog>,
    admin_token: Option<String>,
}

impl AppState {
    pub fn new(bundle: SurveyBundle, log: ResponseLog, admin_token: Option<String>) -> Self {
        Self {
            bundle,
            log: Mutex::new(log),
            admin_token: admin_token.filter(|t| !t.is_empty()),
        }
    }
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/participant", post(new_participant))
        .route("/api/bundle/next", get(next_item))
        .route("/api/response", post(record_response))
        .route("/api/results", get(results))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::DuplicateResponse { .. } => StatusCode::CONFLICT,
            Error::UnknownItem(_) => StatusCode::NOT_FOUND,
            Error::InvalidRequest(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn check_token(token: &str) -> Result<(), ApiError> {
    if token.is_empty() || token.len() > MAX_TOKEN_LEN {
        return Err(ApiError(StatusCode::BAD_REQUEST, "missing or oversized participant token".into()));
    }
    Ok(())
}

#[derive(Serialize)]
struct Participant {
    participant: String,
}

async fn new_participant() -> Json<Participant> {
    Json(Participant {
        participant: uuid::Uuid::new_v4().to_string(),
    })
}

#[derive(Deserialize)]
struct NextQuery {
    participant: String,
}

async fn next_item(
    State(state): State<Arc<AppState>>,
    Query(q): Query<NextQuery>,
) -> Result<Response, ApiError> {
    check_token(&q.participant)?;
    let log = state.log.lock().expect("log lock");
    Ok(match log.next_item(&state.bundle, &q.participant) {
        Some(view) => Json(view).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponseBody {
    participant: String,
    item_id: String,
    choice: String,
}

#[derive(Serialize)]
struct Accepted {
    accepted: bool,
    remaining: usize,
}

async fn record_response(
    State(state): State<Arc<AppState>>,
    Json(body): Json<ResponseBody>,
) -> Result<Json<Accepted>, ApiError> {
    check_token(&body.participant)?;
    let choice: Choice = body.choice.parse()?;
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut log = state.log.lock().expect("log lock");
    log.record(
        &state.bundle,
        SurveyResponse {
            participant_id: body.participant.clone(),
            item_id: body.item_id,
            choice,
            timestamp,
        },
    )?;
    let remaining = state
        .bundle
        .items
        .iter()
        .filter(|i| !log.has_answered(&body.participant, &i.item_id))
        .count();
    Ok(Json(Accepted {
        accepted: true,
        remaining,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ResultsReport {
    pub bundle_id: String,
    pub responses: usize,
    pub counts: PreferenceCounts,
    /// Absent while no responses have been recorded.
    pub test: Option<TestResult>,
    pub table: Option<String>,
}

async fn results(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
) -> Result<Json<ResultsReport>, ApiError> {
    let Some(expected) = &state.admin_token else {
        return Err(ApiError(
            StatusCode::FORBIDDEN,
            format!("results are disabled; set {ADMIN_TOKEN_VAR} to enable them"),
        ));
    };
    let given = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if given != Some(expected.as_str()) {
        return Err(ApiError(StatusCode::UNAUTHORIZED, "bad admin token".into()));
    }
    // Snapshot under the lock, compute outside it.
    let entries = state.log.lock().expect("log lock").entries().to_vec();
    let counts = tally(&entries, &state.bundle)?;
    let test = if counts.total() > 0 {
        Some(preference_test(&counts, UNIFORM_NULL)?)
    } else {
        None
    };
    Ok(Json(ResultsReport {
        bundle_id: state.bundle.bundle_id.clone(),
        responses: entries.len(),
        counts,
        table: test.as_ref().map(TestResult::render_table),
        test,
    }))
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
