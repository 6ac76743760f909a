// The generator wire protocol. The oracle is hosted behind
// `POST /generate` and driven through the HTTP client, exactly as a real
// generative model would be.

use std::net::TcpListener;
use std::sync::Arc;
use std::time::Duration;

use fairgen::generator::{protocol_router, ExternalGenerator, Generator, Oracle, OracleConfig};
use fairgen::latent::{sample_latent, RngHandle};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let oracle = Arc::new(Oracle::new(OracleConfig::desk())?);
    let listener = TcpListener::bind("127.0.0.1:0")?;
    listener.set_nonblocking(true)?;
    let endpoint = format!("http://{}", listener.local_addr()?);
    let served = Arc::clone(&oracle);
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async {
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            axum::serve(listener, protocol_router(served)).await.unwrap();
        });
    });

    let remote = ExternalGenerator::new(endpoint, 16, 8)?.with_retry(3, Duration::from_millis(50));
    let mut rng = RngHandle::from_seed(1);
    let batch = (0..4)
        .map(|_| sample_latent(&mut rng, 16))
        .collect::<Result<Vec<_>, _>>()?;

    let over_http = remote.generate_batch(&batch)?;
    let local = oracle.generate_batch(&batch)?;
    for (i, (a, b)) in over_http.iter().zip(&local).enumerate() {
        println!("item {i}: {:.4?}", &a.feature.as_slice()[..4]);
        assert_eq!(a, b);
    }
    println!("descriptor: {}", remote.descriptor());
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
