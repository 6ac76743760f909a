use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use fairgen::generator::{protocol_router, ExternalGenerator, GenerateRequest, Generator, Oracle, OracleConfig};
use fairgen::latent::{sample_latent, LatentVector, RngHandle};
use fairgen::Error;
use serde_json::{json, Value};

fn spawn(router: Router) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        tokio::runtime::Runtime::new().unwrap().block_on(async {
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            axum::serve(listener, router).await.unwrap();
        })
    });
    url
}

/// A server that always answers with `body`.
fn canned(status: StatusCode, body: Value) -> String {
    spawn(Router::new().route(
        "/generate",
        post(move || {
            let body = body.clone();
            async move { (status, Json(body)) }
        }),
    ))
}

fn latents(n: usize, dim: usize) -> Vec<LatentVector> {
    let mut rng = RngHandle::from_seed(4);
    (0..n).map(|_| sample_latent(&mut rng, dim).unwrap()).collect()
}

fn client(url: String, feature_dim: usize) -> ExternalGenerator {
    ExternalGenerator::new(url, 2, feature_dim)
        .unwrap()
        .with_retry(2, Duration::from_millis(10))
}

#[test]
fn hosted_oracle_matches_local_and_keeps_order() {
    let oracle = Arc::new(Oracle::new(OracleConfig::desk()).unwrap());
    let url = spawn(protocol_router(Arc::clone(&oracle)));
    let remote = ExternalGenerator::new(url, 16, 8).unwrap();
    let batch = latents(3, 16);
    let got = remote.generate_batch(&batch).unwrap();
    assert_eq!(got, oracle.generate_batch(&batch).unwrap());
    assert!(got.iter().all(|g| g.image_ref.is_none()));
}

#[test]
fn echo_server_preserves_order_and_images() {
    let url = spawn(Router::new().route(
        "/generate",
        post(|Json(req): Json<GenerateRequest>| async move {
            let images: Vec<String> = (0..req.latents.len()).map(|i| format!("img/{i}.png")).collect();
            Json(json!({ "features": req.latents, "images": images }))
        }),
    ));
    let batch = vec![
        LatentVector::new(vec![0.1, 0.2]).unwrap(),
        LatentVector::new(vec![0.3, 0.4]).unwrap(),
        LatentVector::new(vec![0.5, 0.6]).unwrap(),
    ];
    let out = client(url, 2).generate_batch(&batch).unwrap();
    for (i, (g, z)) in out.iter().zip(&batch).enumerate() {
        assert_eq!(g.feature.as_slice(), z.as_slice());
        assert_eq!(g.image_ref.as_deref(), Some(format!("img/{i}.png").as_str()));
    }
}

#[test]
fn short_response_names_the_missing_index() {
    let url = canned(StatusCode::OK, json!({ "features": [[0.0, 0.0], [0.0, 0.0]] }));
    let err = client(url, 2).generate_batch(&latents(3, 2)).unwrap_err();
    assert!(matches!(err, Error::Protocol { index: Some(2), .. }), "{err}");
    assert_eq!(err.exit_code(), 4);
    assert!(!err.is_retryable());
}

#[test]
fn bad_items_are_protocol_errors_at_their_index() {
    for (features, index) in [
        (json!([[0.0, 0.0], null]), 1),
        (json!([[0.0, 0.0, 0.0], [0.0, 0.0]]), 0),
        (json!([[0.0, 0.0], [0.0, "x"]]), 1),
    ] {
        let url = canned(StatusCode::OK, json!({ "features": features }));
        let err = client(url, 2).generate_batch(&latents(2, 2)).unwrap_err();
        assert!(
            matches!(err, Error::Protocol { index: Some(i), .. } if i == index),
            "{err}"
        );
    }
}

#[test]
fn image_count_mismatch_is_rejected() {
    let url = canned(
        StatusCode::OK,
        json!({ "features": [[0.0, 0.0], [0.0, 0.0]], "images": ["a"] }),
    );
    let err = client(url, 2).generate_batch(&latents(2, 2)).unwrap_err();
    assert!(matches!(err, Error::Protocol { .. }), "{err}");
}

#[test]
fn non_json_body_is_a_protocol_error() {
    let url = spawn(Router::new().route("/generate", post(|| async { "not json" })));
    let err = client(url, 2).generate_batch(&latents(1, 2)).unwrap_err();
    assert!(matches!(err, Error::Protocol { index: None, .. }), "{err}");
}

#[test]
fn non_200_is_retried_then_reported_as_transport() {
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&hits);
    let url = spawn(Router::new().route(
        "/generate",
        post(move || {
            counter.fetch_add(1, Ordering::SeqCst);
            async { (StatusCode::SERVICE_UNAVAILABLE, "busy") }
        }),
    ));
    let err = client(url, 2).generate_batch(&latents(1, 2)).unwrap_err();
    assert!(matches!(err, Error::Transport { attempts: 2, .. }), "{err}");
    assert!(err.is_retryable());
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[test]
fn transient_failure_recovers_on_retry() {
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&hits);
    let url = spawn(Router::new().route(
        "/generate",
        post(move || {
            let first = counter.fetch_add(1, Ordering::SeqCst) == 0;
            async move {
                if first {
                    (StatusCode::BAD_GATEWAY, Json(json!({})))
                } else {
                    (StatusCode::OK, Json(json!({ "features": [[1.0, -1.0]] })))
                }
            }
        }),
    ));
    let out = client(url, 2).generate_batch(&latents(1, 2)).unwrap();
    assert_eq!(out[0].feature.as_slice(), &[1.0, -1.0]);
}

#[test]
fn unreachable_endpoint_is_retryable_transport_error() {
    // bind then drop to get a port nobody listens on
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = client(format!("http://127.0.0.1:{port}"), 2)
        .generate_batch(&latents(1, 2))
        .unwrap_err();
    assert!(matches!(err, Error::Transport { .. }), "{err}");
    assert!(err.is_retryable());
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn empty_batch_and_wrong_latent_dim_fail_before_sending() {
    let gen = client("http://127.0.0.1:9".into(), 2);
    assert!(gen.generate_batch(&[]).is_err());
    let err = gen.generate_batch(&latents(1, 3)).unwrap_err();
    assert!(!matches!(err, Error::Transport { .. }), "{err}");
}
