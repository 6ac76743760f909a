// The review API in-process: start the service on an ephemeral port,
// page through the queue, resolve one item and watch the stats move.

use std::net::TcpListener;

use fairgen::config::RunConfig;
use fairgen::generator::OracleConfig;
use fairgen::review::{self, ServiceState, Stats};
use fairgen::workflow;
use serde_json::{json, Value};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig {
        seed: 2,
        oracle: OracleConfig::desk(),
        ..RunConfig::default()
    };
    let classifier = workflow::train_feature_classifier(&cfg)?;
    let (_, mut manifest) = workflow::survey(&cfg, 200, &classifier)?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("run.manifest");
    manifest.write(&path)?;
    workflow::label_manifest(&mut manifest, &path, &workflow::train_heads_from_oracle(&cfg)?)?;

    let state = ServiceState::open(&path, cfg.review.threshold)?;
    let listener = TcpListener::bind("127.0.0.1:0")?;
    listener.set_nonblocking(true)?;
    let base = format!("http://{}", listener.local_addr()?);
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async {
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            axum::serve(listener, review::router(state, None)).await.unwrap();
        });
    });

    let http = reqwest::blocking::Client::new();
    let page: Vec<Value> = http.get(format!("{base}/api/queue?limit=3")).send()?.json()?;
    println!("first page: {} items", page.len());
    let before: Stats = http.get(format!("{base}/api/stats")).send()?.json()?;

    let item = &page[0];
    let resolved: Value = http
        .post(format!("{base}/api/label"))
        .json(&json!({
            "record_id": item["record_id"],
            "attribute": item["attribute"],
            "value": item["allowed"][0],
            "resolver": "example",
        }))
        .send()?
        .error_for_status()?
        .json()?;
    println!("resolved: {resolved}");

    let after: Stats = http.get(format!("{base}/api/stats")).send()?.json()?;
    println!("pending {} -> {}", before.pending, after.pending);
    assert_eq!(after.pending, before.pending - 1);
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
