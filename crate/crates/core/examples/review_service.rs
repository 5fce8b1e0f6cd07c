//! Prepares a dataset, runs the stages and starts the review service on it.
//! Try `curl localhost:8080/api/scenes` or `curl localhost:8080/api/episodes`.

use std::net::SocketAddr;

use fuselabel::fixtures::{self, RenderOptions};
use fuselabel::pipeline::{run_all, Stage, StageConfig};
use fuselabel::service::{serve, ServeConfig};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let addr: SocketAddr = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "127.0.0.1:8080".into())
        .parse()?;
    let dir = tempfile::tempdir()?;
    let manifest = fixtures::standard_dataset(&dir.path().join("data"), &RenderOptions::default())?;
    let out = dir.path().join("out");
    let mut config = StageConfig::new(&manifest, &out);
    config.parts.k = 2;
    tokio::task::block_in_place(|| run_all(&Stage::ALL, &config))?;
    println!("serving {} on http://{addr}", out.display());
    serve(ServeConfig {
        manifest,
        out,
        addr,
        ui: None,
    })
    .await?;
    Ok(())
}
