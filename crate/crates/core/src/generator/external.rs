//! Wire protocol for an external generator.
//!
//! `POST <endpoint>/generate` with `{"latents": [[f64, ...], ...]}`; the
//! server answers `{"features": [[f64, ...], ...], "images": [string, ...]?}`
//! with one entry per latent, in request order. Any status other than 200 is
//! a transport error.

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::{FeatureVector, Generated, Generator};
use crate::error::{Error, Result};
use crate::latent::LatentVector;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub latents: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub features: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<Vec<String>>,
}

/// Response shape accepted on the client side. Feature entries stay loosely
/// typed so a `null` (a NaN on the server) is reported at its index instead
/// of failing the whole body.
#[derive(Debug, Deserialize)]
struct RawResponse {
    features: Vec<serde_json::Value>,
    #[serde(default)]
    images: Option<Vec<String>>,
}

/// Blocking HTTP client for a remote generator.
#[derive(Debug, Clone)]
pub struct ExternalGenerator {
    endpoint: String,
    latent_dim: usize,
    feature_dim: usize,
    attempts: u32,
    backoff: Duration,
    client: reqwest::blocking::Client,
}

impl ExternalGenerator {
    pub fn new(endpoint: impl Into<String>, latent_dim: usize, feature_dim: usize) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            latent_dim,
            feature_dim,
            attempts: 3,
            backoff: Duration::from_millis(200),
            client,
        })
    }

    /// Total tries per batch (at least one) and the linear backoff step.
    pub fn with_retry(mut self, attempts: u32, backoff: Duration) -> Self {
        self.attempts = attempts.max(1);
        self.backoff = backoff;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn post_once(&self, body: &GenerateRequest) -> std::result::Result<String, String> {
        let url = format!("{}/generate", self.endpoint);
        let resp = self.client.post(url).json(body).send().map_err(|e| e.to_string())?;
        let status = resp.status();
        if status != reqwest::StatusCode::OK {
            return Err(format!("HTTP status {status}"));
        }
        resp.text().map_err(|e| e.to_string())
    }

    fn decode(&self, batch_len: usize, body: &str) -> Result<Vec<Generated>> {
        let raw: RawResponse = serde_json::from_str(body).map_err(|e| Error::Protocol {
            index: None,
            reason: format!("malformed response body: {e}"),
        })?;
        if raw.features.len() != batch_len {
            return Err(Error::Protocol {
                index: Some(raw.features.len().min(batch_len)),
                reason: format!("expected {batch_len} feature vectors, received {}", raw.features.len()),
            });
        }
        if let Some(images) = &raw.images {
            if images.len() != batch_len {
                return Err(Error::Protocol {
                    index: Some(images.len().min(batch_len)),
                    reason: format!("expected {batch_len} image references, received {}", images.len()),
                });
            }
        }
        let mut out = Vec::with_capacity(batch_len);
        for (index, value) in raw.features.into_iter().enumerate() {
            let feature = parse_feature(value, self.feature_dim).map_err(|reason| Error::Protocol {
                index: Some(index),
                reason,
            })?;
            let image_ref = raw.images.as_ref().map(|imgs| imgs[index].clone());
            out.push(Generated { feature, image_ref });
        }
        Ok(out)
    }
}

fn parse_feature(value: serde_json::Value, dim: usize) -> std::result::Result<FeatureVector, String> {
    let items = value.as_array().ok_or("feature entry is not an array")?;
    if items.len() != dim {
        return Err(format!("feature length {} != {dim}", items.len()));
    }
    let comps = items
        .iter()
        .map(|c| {
            c.as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| format!("non-finite component {c}"))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    FeatureVector::new(comps).map_err(|e| e.to_string())
}

impl Generator for ExternalGenerator {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn generate_batch(&self, batch: &[LatentVector]) -> Result<Vec<Generated>> {
        if batch.is_empty() {
            return Err(Error::InvalidDimension("empty generation batch".into()));
        }
        for z in batch {
            crate::latent::ensure_same_len(self.latent_dim, z.dim())?;
        }
        let body = GenerateRequest {
            latents: batch.iter().map(|z| z.as_slice().to_vec()).collect(),
        };
        let mut last = String::new();
        for attempt in 1..=self.attempts {
            match self.post_once(&body) {
                Ok(text) => return self.decode(batch.len(), &text),
                Err(reason) => {
                    last = reason;
                    if attempt < self.attempts {
                        thread::sleep(self.backoff * attempt);
                    }
                }
            }
        }
        Err(Error::Transport {
            attempts: self.attempts,
            reason: last,
        })
    }

    fn descriptor(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "external",
            "endpoint": self.endpoint,
            "latent_dim": self.latent_dim,
            "feature_dim": self.feature_dim,
        })
    }
}

/// Serves any [`Generator`] over the wire protocol at `/generate`.
pub fn protocol_router<G>(generator: Arc<G>) -> Router
where
    G: Generator + Send + Sync + 'static,
{
    Router::new()
        .route("/generate", post(generate_handler::<G>))
        .with_state(generator)
}

async fn generate_handler<G>(
    State(generator): State<Arc<G>>,
    Json(req): Json<GenerateRequest>,
) -> std::result::Result<Json<GenerateResponse>, (StatusCode, String)>
where
    G: Generator + Send + Sync + 'static,
{
    let bad = |e: Error| (StatusCode::BAD_REQUEST, e.to_string());
    let latents = req
        .latents
        .into_iter()
        .map(LatentVector::new)
        .collect::<Result<Vec<_>>>()
        .map_err(bad)?;
    let outputs = tokio::task::spawn_blocking(move || generator.generate_batch(&latents))
        .await
        .map_err(|e| (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(bad)?;
    let images: Option<Vec<String>> = outputs.iter().map(|g| g.image_ref.clone()).collect();
    Ok(Json(GenerateResponse {
        features: outputs.into_iter().map(|g| g.feature.into()).collect(),
        images,
    }))
}
