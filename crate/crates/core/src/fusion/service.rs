//! HTTP API.
//!
//! * `GET /v1/health`
//! * `GET /v1/classes`
//! * `POST /v1/diagnose`, multipart with `image` (file), `narrative` (text)
//!   and optional `top_n` and `k` (an integer or `direct`).
//!
//! Errors are `{"error": {"code": "...", "message": "..."}}` with a 4xx or
//! 5xx status.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::multipart::MultipartRejection;
use axum::extract::{DefaultBodyLimit, Multipart, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use tracing::info;

use super::config::{load_models, ServiceConfig, ServiceLimits};
use super::{diagnose, ChainMode, DiagnoseOptions, DiagnosisResult, ImageClassifier};
use crate::error::{Error, Result};
use crate::registry::ClassEntry;
use crate::text::TextClassifier;
use crate::vision::decode_image;

pub struct AppState {
    pub vision: Arc<dyn ImageClassifier>,
    pub text: Arc<dyn TextClassifier>,
    pub defaults: DiagnoseOptions,
    pub limits: ServiceLimits,
    pub record_timings: bool,
}

impl AppState {
    pub fn new(
        vision: Arc<dyn ImageClassifier>,
        text: Arc<dyn TextClassifier>,
        defaults: DiagnoseOptions,
        limits: ServiceLimits,
        record_timings: bool,
    ) -> Result<Self> {
        vision.registry().ensure_matches(text.registry())?;
        defaults.validate(vision.registry())?;
        Ok(AppState {
            vision,
            text,
            defaults,
            limits,
            record_timings,
        })
    }

    pub fn from_config(cfg: &ServiceConfig) -> Result<Self> {
        let (vision, text) = load_models(cfg)?;
        AppState::new(
            Arc::new(vision),
            Arc::new(text),
            cfg.default_options()?,
            cfg.limits.clone(),
            cfg.record_timings,
        )
    }
}

#[derive(Serialize)]
struct ErrorDetail<'a> {
    code: &'a str,
    message: String,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: ErrorDetail<'a>,
}

pub fn error_body(code: &str, message: impl Into<String>) -> String {
    serde_json::to_string(&ErrorBody {
        error: ErrorDetail {
            code,
            message: message.into(),
        },
    })
    .expect("error body serializes")
}

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad(code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            [(axum::http::header::CONTENT_TYPE, "application/json")],
            error_body(self.code, self.message),
        )
            .into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(m) => ApiError::bad("invalid_input", m),
            other => ApiError {
                status: StatusCode::INTERNAL_SERVER_ERROR,
                code: "internal",
                message: other.to_string(),
            },
        }
    }
}

#[derive(Serialize)]
struct Models<'a> {
    vision: &'a str,
    text: &'a str,
}

#[derive(Serialize)]
struct Defaults {
    top_n: usize,
    chain: String,
}

#[derive(Serialize)]
struct Health<'a> {
    status: &'a str,
    registry_version: &'a str,
    num_classes: usize,
    models: Models<'a>,
    defaults: Defaults,
    limits: &'a ServiceLimits,
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    let body = Health {
        status: "ok",
        registry_version: state.vision.registry().version(),
        num_classes: state.vision.registry().len(),
        models: Models {
            vision: state.vision.model_id(),
            text: state.text.model_id(),
        },
        defaults: Defaults {
            top_n: state.defaults.top_n,
            chain: state.defaults.chain.to_string(),
        },
        limits: &state.limits,
    };
    Json(body).into_response()
}

#[derive(Serialize)]
struct Classes<'a> {
    registry_version: &'a str,
    classes: &'a [ClassEntry],
}

async fn classes(State(state): State<Arc<AppState>>) -> Response {
    let r = state.vision.registry();
    Json(Classes {
        registry_version: r.version(),
        classes: r.entries(),
    })
    .into_response()
}

fn multipart_error(e: axum::extract::multipart::MultipartError) -> ApiError {
    let status = e.status();
    ApiError {
        status,
        code: if status == StatusCode::PAYLOAD_TOO_LARGE {
            "payload_too_large"
        } else {
            "invalid_multipart"
        },
        message: e.body_text(),
    }
}

async fn diagnose_handler(
    State(state): State<Arc<AppState>>,
    multipart: std::result::Result<Multipart, MultipartRejection>,
) -> std::result::Result<Json<DiagnosisResult>, ApiError> {
    let mut multipart = multipart.map_err(|e| ApiError::bad("invalid_multipart", e.body_text()))?;
    let mut image: Option<(String, Vec<u8>)> = None;
    let mut narrative: Option<String> = None;
    let mut options = state.defaults;
    while let Some(field) = multipart.next_field().await.map_err(multipart_error)? {
        let name = field.name().unwrap_or("").to_string();
        match name.as_str() {
            "image" => {
                let file = field.file_name().unwrap_or("upload").to_string();
                let bytes = field.bytes().await.map_err(multipart_error)?;
                image = Some((file, bytes.to_vec()));
            }
            "narrative" => narrative = Some(field.text().await.map_err(multipart_error)?),
            "top_n" => {
                let v = field.text().await.map_err(multipart_error)?;
                options.top_n = v
                    .trim()
                    .parse()
                    .map_err(|_| ApiError::bad("invalid_parameter", format!("top_n must be an integer, got {v:?}")))?;
            }
            "k" => {
                let v = field.text().await.map_err(multipart_error)?;
                options.chain = v
                    .parse::<ChainMode>()
                    .map_err(|e| ApiError::bad("invalid_parameter", e.to_string()))?;
            }
            other => return Err(ApiError::bad("unknown_field", format!("unexpected field {other:?}"))),
        }
    }
    let (file, bytes) = image.ok_or_else(|| ApiError::bad("missing_field", "field \"image\" is required"))?;
    let narrative = narrative.ok_or_else(|| ApiError::bad("missing_field", "field \"narrative\" is required"))?;
    if narrative.trim().is_empty() {
        return Err(ApiError::bad("empty_narrative", "narrative must not be empty"));
    }
    if narrative.chars().count() > state.limits.max_narrative_chars {
        return Err(ApiError {
            status: StatusCode::PAYLOAD_TOO_LARGE,
            code: "narrative_too_long",
            message: format!("narrative exceeds {} characters", state.limits.max_narrative_chars),
        });
    }
    options
        .validate(state.vision.registry())
        .map_err(|e| ApiError::bad("invalid_parameter", e.to_string()))?;

    let worker = state.clone();
    let result = tokio::task::spawn_blocking(move || -> std::result::Result<DiagnosisResult, ApiError> {
        let img = decode_image(&bytes).map_err(|e| ApiError::bad("unreadable_image", e.to_string()))?;
        let mut r = diagnose(worker.vision.as_ref(), worker.text.as_ref(), &file, &img, &narrative, &options)?;
        if !worker.record_timings {
            r.timings = None;
        }
        Ok(r)
    })
    .await
    .map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        code: "internal",
        message: e.to_string(),
    })??;
    Ok(Json(result))
}

async fn not_found() -> ApiError {
    ApiError {
        status: StatusCode::NOT_FOUND,
        code: "not_found",
        message: "no such endpoint".into(),
    }
}

pub fn build_router(state: Arc<AppState>) -> Router {
    let limit = state.limits.max_upload_bytes;
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/classes", get(classes))
        .route("/v1/diagnose", post(diagnose_handler))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Loads the models, binds `addr` and serves until the process exits.
pub fn serve(config: &ServiceConfig, addr: SocketAddr) -> Result<()> {
    let state = Arc::new(AppState::from_config(config)?);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::io(addr.to_string(), e))?;
        info!(%addr, "listening");
        axum::serve(listener, build_router(state))
            .await
            .map_err(|e| Error::io(addr.to_string(), e))
    })
}
