//! Stateless HTTP facade over the reward functions.
//!
//! `POST /v1/score` takes `{"spec": <preset name | spec object>, "items":
//! [...]}` and answers `{"items": [...], "spec_echo": {...}}` in request
//! order. Schema violations are 400, batches over [`MAX_ITEMS`] are 413 and
//! items whose task or ground truth does not fit the spec are 422. Error
//! bodies are `{"error": <message>, "path": <field path>}`.

use std::collections::HashSet;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use vrft_core::reward::RewardSpec;

use crate::scoring::{from_json_str, score_item, FieldError, Presets, ScoreItem, SpecError, WireScore, MAX_ITEMS};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Room for a full batch of long completions.
const BODY_LIMIT: usize = 256 * 1024 * 1024;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreRequest {
    spec: serde_json::Value,
    items: Vec<ScoreItem>,
}

#[derive(Serialize)]
struct ScoreResponse<'a> {
    items: Vec<WireScore<'a>>,
    spec_echo: &'a RewardSpec,
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
    path: String,
}

#[derive(Serialize)]
struct Health<'a> {
    status: &'static str,
    version: &'static str,
    presets: Vec<&'a str>,
}

fn reject(status: StatusCode, e: FieldError) -> Response {
    (
        status,
        axum::Json(ErrorBody {
            error: e.message,
            path: e.path,
        }),
    )
        .into_response()
}

fn json(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn healthz(State(presets): State<Arc<Presets>>) -> Response {
    let body = Health {
        status: "ok",
        version: VERSION,
        presets: presets.names().collect(),
    };
    json(serde_json::to_string(&body).expect("serializable"))
}

async fn score(State(presets): State<Arc<Presets>>, body: Bytes) -> Response {
    let text = match std::str::from_utf8(&body) {
        Ok(t) => t,
        Err(e) => return reject(StatusCode::BAD_REQUEST, FieldError::new(".", format!("body is not UTF-8: {e}"))),
    };
    let req: ScoreRequest = match from_json_str(text, "") {
        Ok(r) => r,
        Err(e) => return reject(StatusCode::BAD_REQUEST, e),
    };
    if req.items.len() > MAX_ITEMS {
        return reject(
            StatusCode::PAYLOAD_TOO_LARGE,
            FieldError::new("items", format!("{} items exceed the limit of {MAX_ITEMS}", req.items.len())),
        );
    }
    let mut seen = HashSet::with_capacity(req.items.len());
    for (i, item) in req.items.iter().enumerate() {
        if !seen.insert(item.id.as_str()) {
            return reject(
                StatusCode::BAD_REQUEST,
                FieldError::new(format!("items[{i}].id"), format!("duplicate id `{}`", item.id)),
            );
        }
    }
    let spec = match presets.resolve(req.spec, "spec") {
        Ok(s) => s,
        Err(SpecError::Schema(e)) => return reject(StatusCode::BAD_REQUEST, e),
        Err(SpecError::Invalid(e)) => return reject(StatusCode::UNPROCESSABLE_ENTITY, e),
    };
    let mut scored = Vec::with_capacity(req.items.len());
    for (i, item) in req.items.iter().enumerate() {
        match score_item(item, &spec) {
            Ok(b) => scored.push(WireScore::new(&item.id, &b)),
            Err(e) => {
                let path = format!("items[{i}].{}", e.field());
                return reject(StatusCode::UNPROCESSABLE_ENTITY, FieldError::new(path, e));
            }
        }
    }
    let body = ScoreResponse {
        items: scored,
        spec_echo: &spec,
    };
    json(serde_json::to_string(&body).expect("serializable"))
}

pub fn router(presets: Presets) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/score", post(score))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(Arc::new(presets))
}

/// Serves until the process is stopped.
pub async fn serve(port: u16, presets: Presets) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    axum::serve(listener, router(presets)).await
}
