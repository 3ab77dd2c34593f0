//! JSON-over-HTTP facade for the compressors.
//!
//! - `POST /v1/compress` compresses one prompt and returns the result with
//!   its token trace.
//! - `GET /v1/compressors` lists compressors, their parameters and whether
//!   they can run with the current configuration.
//! - `GET /healthz` reports liveness.

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pct_core::compressors::{CompressorConfig, KIS_MAX_LENGTH_RULE, SCRL_MAX_LENGTH_RULE};
use pct_core::{CompressError, CompressionRequest, CompressorKind, PromptCompressor};
use serde::Serialize;
use serde_json::{json, Map, Value};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBody {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upstream_status: Option<u16>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn invalid(fields: Vec<FieldError>) -> Self {
        let message = fields
            .iter()
            .map(|f| format!("{}: {}", f.field, f.message))
            .collect::<Vec<_>>()
            .join("; ");
        ApiError {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody {
                error: "invalid_request",
                message,
                fields,
                upstream_status: None,
            },
        }
    }

    fn field(field: &str, message: impl Into<String>) -> Self {
        Self::invalid(vec![FieldError {
            field: field.into(),
            message: message.into(),
        }])
    }

    fn unprocessable(error: &'static str, message: String) -> Self {
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: ErrorBody {
                error,
                message,
                fields: Vec::new(),
                upstream_status: None,
            },
        }
    }

    fn upstream(message: String, upstream_status: Option<u16>) -> Self {
        ApiError {
            status: StatusCode::BAD_GATEWAY,
            body: ErrorBody {
                error: "upstream_failure",
                message,
                fields: Vec::new(),
                upstream_status,
            },
        }
    }
}

impl From<CompressError> for ApiError {
    fn from(e: CompressError) -> Self {
        match e {
            CompressError::InvalidRequest { field, message } => ApiError::field(field, message),
            CompressError::Unavailable(..) => ApiError::unprocessable("compressor_unavailable", e.to_string()),
            CompressError::Scorer(pct_core::scorer::ScoreError::EmptyText) => ApiError::field("text", e.to_string()),
            _ => {
                let status = e.upstream_status();
                ApiError::upstream(e.to_string(), status)
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

const FIELDS: [&str; 8] = [
    "text",
    "compressor",
    "ratio",
    "question",
    "instruction",
    "max_length",
    "seed",
    "params",
];

/// Key of a compressor's section in [`CompressorConfig`].
pub fn params_section(kind: CompressorKind) -> &'static str {
    match kind {
        CompressorKind::SelectiveContext => "selective_context",
        CompressorKind::Lingua | CompressorKind::LongLingua => "lingua",
        CompressorKind::Scrl => "scrl",
        CompressorKind::Kis => "kis",
    }
}

fn optional_string(obj: &Map<String, Value>, key: &str, errors: &mut Vec<FieldError>) -> Option<String> {
    match obj.get(key) {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => {
            errors.push(FieldError {
                field: key.into(),
                message: "must be a string".into(),
            });
            None
        }
    }
}

fn optional_uint(obj: &Map<String, Value>, key: &str, errors: &mut Vec<FieldError>) -> Option<u64> {
    match obj.get(key) {
        None | Some(Value::Null) => None,
        Some(v) => match v.as_u64() {
            Some(n) => Some(n),
            None => {
                errors.push(FieldError {
                    field: key.into(),
                    message: "must be a non-negative integer".into(),
                });
                None
            }
        },
    }
}

/// Turns a request body into a compression request plus the compressor
/// settings it asks for (`base` with `params` merged into the compressor's
/// section).
pub fn parse_request(
    body: &[u8],
    base: &CompressorConfig,
) -> Result<(CompressionRequest, CompressorConfig), ApiError> {
    let value: Value = serde_json::from_slice(body).map_err(|e| ApiError::field("body", format!("invalid JSON: {e}")))?;
    let Value::Object(obj) = value else {
        return Err(ApiError::field("body", "expected a JSON object"));
    };

    let kind = match obj.get("compressor") {
        Some(Value::String(name)) => Some(
            name.parse::<CompressorKind>()
                .map_err(|e| ApiError::unprocessable("unsupported_compressor", e.to_string()))?,
        ),
        _ => None,
    };

    let mut errors = Vec::new();
    for key in obj.keys().filter(|k| !FIELDS.contains(&k.as_str())) {
        errors.push(FieldError {
            field: key.clone(),
            message: "unknown field".into(),
        });
    }
    let text = match obj.get("text") {
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => {
            errors.push(FieldError { field: "text".into(), message: "must be a string".into() });
            None
        }
        None => {
            errors.push(FieldError { field: "text".into(), message: "is required".into() });
            None
        }
    };
    if kind.is_none() {
        let message = if obj.contains_key("compressor") { "must be a string" } else { "is required" };
        errors.push(FieldError { field: "compressor".into(), message: message.into() });
    }
    let ratio = match obj.get("ratio") {
        Some(v) => match v.as_f64() {
            Some(r) => Some(r),
            None => {
                errors.push(FieldError { field: "ratio".into(), message: "must be a number".into() });
                None
            }
        },
        None => {
            errors.push(FieldError { field: "ratio".into(), message: "is required".into() });
            None
        }
    };
    let question = optional_string(&obj, "question", &mut errors);
    let instruction = optional_string(&obj, "instruction", &mut errors);
    let max_length = optional_uint(&obj, "max_length", &mut errors);
    let seed = optional_uint(&obj, "seed", &mut errors);
    let params = match obj.get("params") {
        None | Some(Value::Null) => None,
        Some(Value::Object(p)) => Some(p.clone()),
        Some(_) => {
            errors.push(FieldError { field: "params".into(), message: "must be an object".into() });
            None
        }
    };
    let (Some(text), Some(kind), Some(ratio), true) = (text, kind, ratio, errors.is_empty()) else {
        return Err(ApiError::invalid(errors));
    };

    let mut config = base.clone();
    if let Some(params) = params {
        let mut merged = serde_json::to_value(&config).map_err(|e| ApiError::field("params", e.to_string()))?;
        let section = &mut merged[params_section(kind)];
        if let Value::Object(target) = section {
            target.extend(params);
        }
        config = serde_json::from_value(merged).map_err(|e| ApiError::field("params", e.to_string()))?;
    }

    let req = CompressionRequest {
        text,
        compressor: kind,
        ratio,
        question,
        instruction,
        max_length: max_length.map(|m| usize::try_from(m).unwrap_or(usize::MAX)),
        seed,
    };
    Ok((req, config))
}

/// Description of every compressor for `GET /v1/compressors`.
pub fn compressor_catalog(compressor: &PromptCompressor) -> Value {
    let defaults = serde_json::to_value(compressor.config()).unwrap_or(Value::Null);
    let list: Vec<Value> = CompressorKind::ALL
        .iter()
        .map(|&kind| {
            let available = compressor.is_available(kind);
            let max_length = match kind {
                CompressorKind::Scrl => json!({"accepted": true, "rule": SCRL_MAX_LENGTH_RULE}),
                CompressorKind::Kis => json!({"accepted": true, "rule": KIS_MAX_LENGTH_RULE}),
                _ => json!({"accepted": false}),
            };
            let mut entry = json!({
                "name": kind.name(),
                "available": available,
                "extractive": kind.is_extractive(),
                "accepts_question": matches!(kind, CompressorKind::Lingua | CompressorKind::LongLingua),
                "max_length": max_length,
                "params": defaults[params_section(kind)].clone(),
            });
            if !available {
                entry["reason"] = json!("no generation endpoint configured");
            }
            entry
        })
        .collect();
    json!({ "compressors": list })
}

async fn healthz() -> Json<Value> {
    Json(json!({"status": "ok", "version": pct_core::VERSION}))
}

async fn list_compressors(State(compressor): State<PromptCompressor>) -> Json<Value> {
    Json(compressor_catalog(&compressor))
}

async fn compress(State(compressor): State<PromptCompressor>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let (req, config) = parse_request(&body, compressor.config())?;
    let job = compressor.with_config(config);
    let result = tokio::task::spawn_blocking(move || job.compress(&req))
        .await
        .map_err(|e| ApiError::upstream(format!("compression task failed: {e}"), None))??;
    Ok(Json(serde_json::to_value(result).unwrap_or(Value::Null)))
}

fn cors(origins: &[String]) -> CorsLayer {
    let layer = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    if origins.is_empty() {
        return layer.allow_origin(Any);
    }
    let values: Vec<HeaderValue> = origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
    layer.allow_origin(AllowOrigin::list(values))
}

pub fn router(compressor: PromptCompressor, origins: &[String]) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/compressors", get(list_compressors))
        .route("/v1/compress", post(compress))
        .layer(cors(origins))
        .with_state(compressor)
}

/// Serves `router` on `listener` until the process is interrupted.
pub async fn serve(listener: tokio::net::TcpListener, router: Router) -> std::io::Result<()> {
    axum::serve(listener, router)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
