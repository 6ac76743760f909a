//! HTTP review service over a manifest's low-confidence label queue.
//!
//! Endpoints: `GET /api/queue`, `POST /api/label`, `GET /api/stats`. When a
//! UI directory is configured and exists, its files are served at `/`.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::error::{Error, Result};
use crate::labeling::{apply_manual_label, build_review_queue, Provenance, ReviewItem};
use crate::manifest::{append_records, Manifest};
use crate::pipeline::DistributionReport;
use crate::report::report_from_manifest;

pub const DEFAULT_PAGE_LIMIT: usize = 50;
pub const MAX_PAGE_LIMIT: usize = 1000;

/// Audit log location for a manifest: `<manifest>.audit.jsonl`.
pub fn audit_path(manifest: &Path) -> PathBuf {
    let mut s = manifest.as_os_str().to_owned();
    s.push(".audit.jsonl");
    PathBuf::from(s)
}

struct Inner {
    manifest_path: PathBuf,
    manifest: Manifest,
}

/// Shared service state. The manifest is the only mutable part and every
/// mutation goes through one lock, so the file has a single writer.
#[derive(Clone)]
pub struct ServiceState {
    inner: Arc<Mutex<Inner>>,
    threshold: f64,
    audit: PathBuf,
}

impl ServiceState {
    pub fn open(manifest_path: &Path, threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::Config(format!("threshold must be in [0, 1], got {threshold}")));
        }
        let manifest = Manifest::read(manifest_path)?;
        Ok(Self {
            inner: Arc::new(Mutex::new(Inner {
                manifest_path: manifest_path.to_path_buf(),
                manifest,
            })),
            threshold,
            audit: audit_path(manifest_path),
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn queue(&self) -> Vec<ReviewItem> {
        let inner = self.lock();
        build_review_queue(inner.manifest.latest_records(), self.threshold)
    }

    /// Applies a manual label, persists it, and records it in the audit
    /// log; all of that happens before this returns.
    pub fn resolve(&self, req: &LabelRequest) -> Result<ReviewItem> {
        if req.resolver.trim().is_empty() {
            return Err(Error::Config("resolver must not be empty".into()));
        }
        let mut inner = self.lock();
        let previous = inner
            .manifest
            .latest(&req.record_id)
            .and_then(|r| r.downstream_labels.get(&req.attribute))
            .map(|l| l.value.clone());
        let resolution = apply_manual_label(
            &mut inner.manifest,
            &req.record_id,
            &req.attribute,
            &req.value,
            &req.resolver,
        )?;
        if let Some(rec) = &resolution.appended {
            if let Err(e) = append_records(&inner.manifest_path, std::slice::from_ref(rec)) {
                // keep memory consistent with disk
                if let Ok(m) = Manifest::read(&inner.manifest_path) {
                    inner.manifest = m;
                }
                return Err(e);
            }
        }
        let entry = json!({
            "at": Utc::now(),
            "record_id": req.record_id,
            "attribute": req.attribute,
            "previous": previous,
            "value": req.value,
            "resolver": req.resolver,
            "changed": resolution.appended.is_some(),
            "version": resolution.appended.as_ref().map(|r| r.version),
        });
        let mut log = OpenOptions::new().create(true).append(true).open(&self.audit)?;
        writeln!(log, "{entry}")?;
        log.sync_data()?;
        Ok(resolution.item)
    }

    pub fn stats(&self) -> Result<Stats> {
        let inner = self.lock();
        let m = &inner.manifest;
        let mut attributes: BTreeMap<String, AttributeStats> = BTreeMap::new();
        let mut total = 0;
        for r in m.latest_records() {
            total += 1;
            for (attr, prov) in &r.label_provenance {
                let s = attributes.entry(attr.clone()).or_default();
                match prov {
                    Provenance::Auto => s.auto += 1,
                    Provenance::Manual => s.manual += 1,
                }
            }
        }
        Ok(Stats {
            total_records: total,
            pending: build_review_queue(m.latest_records(), self.threshold).len(),
            resolved: attributes.values().map(|s| s.manual).sum(),
            distribution: report_from_manifest(m)?,
            attributes,
        })
    }

    fn page(&self, offset: usize, limit: usize) -> Vec<QueueEntry> {
        let inner = self.lock();
        let m = &inner.manifest;
        build_review_queue(m.latest_records(), self.threshold)
            .into_iter()
            .skip(offset)
            .take(limit)
            .filter_map(|item| {
                let r = m.latest(&item.record_id)?;
                let allowed = r.downstream_labels.get(&item.attribute)?.allowed.clone();
                let (image_ref, feature_preview) = match &r.image_ref {
                    Some(img) => (Some(img.clone()), None),
                    None => (None, Some(r.feature.as_slice().to_vec())),
                };
                Some(QueueEntry {
                    group: r.group.name.clone(),
                    allowed,
                    image_ref,
                    feature_preview,
                    item,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRequest {
    pub record_id: String,
    pub attribute: String,
    pub value: String,
    pub resolver: String,
}

/// A queue item plus what a reviewer needs to decide it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    #[serde(flatten)]
    pub item: ReviewItem,
    pub allowed: Vec<String>,
    pub group: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_preview: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeStats {
    pub auto: usize,
    pub manual: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub total_records: usize,
    pub pending: usize,
    pub resolved: usize,
    pub distribution: DistributionReport,
    pub attributes: BTreeMap<String, AttributeStats>,
}

#[derive(Debug, Deserialize)]
struct PageParams {
    limit: Option<usize>,
    offset: Option<usize>,
}

struct ApiError(StatusCode, serde_json::Value);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::NotFound(_) => ApiError(StatusCode::NOT_FOUND, json!({ "error": msg })),
            Error::InvalidValue { allowed, .. } => ApiError(
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({ "error": msg, "allowed": allowed }),
            ),
            Error::Config(_) => ApiError(StatusCode::BAD_REQUEST, json!({ "error": msg })),
            _ => ApiError(StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": msg })),
        }
    }
}

async fn get_queue(State(state): State<ServiceState>, Query(p): Query<PageParams>) -> Json<Vec<QueueEntry>> {
    let limit = p.limit.unwrap_or(DEFAULT_PAGE_LIMIT).min(MAX_PAGE_LIMIT);
    Json(state.page(p.offset.unwrap_or(0), limit))
}

async fn post_label(State(state): State<ServiceState>, body: Bytes) -> std::result::Result<Json<ReviewItem>, ApiError> {
    // parsed by hand so malformed bodies are 400, leaving 422 for bad values
    let req: LabelRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, json!({ "error": e.to_string() })))?;
    let item = tokio::task::spawn_blocking(move || state.resolve(&req))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": e.to_string() })))??;
    Ok(Json(item))
}

async fn get_stats(State(state): State<ServiceState>) -> std::result::Result<Json<Stats>, ApiError> {
    Ok(Json(state.stats()?))
}

/// API routes, plus static files from `ui_dir` at `/` when it exists.
pub fn router(state: ServiceState, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/queue", get(get_queue))
        .route("/api/label", post(post_label))
        .route("/api/stats", get(get_stats))
        .with_state(state);
    match ui_dir.filter(|d| d.is_dir()) {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(state: ServiceState, addr: SocketAddr, ui_dir: Option<&Path>) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state, ui_dir)).await?;
    Ok(())
}
