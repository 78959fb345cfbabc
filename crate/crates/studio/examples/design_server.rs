//! Generates a small parasite dataset and serves the design API on it.
//!
//! cargo run --release -p mlca-studio --example design_server -- [port]
//!
//! Then, for instance:
//!   curl -XPOST localhost:8080/sessions -d '{"manifest_path": ".../manifest.json", "config_path": ".../config.json"}'
//!   curl localhost:8080/sessions/s1/images?sort=worst

use std::net::SocketAddr;
use std::path::PathBuf;

use mlca::pipeline::synth::write_family;
use mlca::pipeline::{SynthFamily, SynthOptions};
use mlca_studio::{serve, AppState};

#[tokio::main]
async fn main() -> std::io::Result<()> {
    let port: u16 = std::env::args().nth(1).and_then(|p| p.parse().ok()).unwrap_or(8080);
    let root = PathBuf::from("target/design_server");
    let opts = SynthOptions { count: 6, families: vec![SynthFamily::Parasite], ..SynthOptions::default() };
    write_family(&root, SynthFamily::Parasite, &opts).map_err(std::io::Error::other)?;
    let dir = std::fs::canonicalize(root.join("parasite"))?;
    println!(
        "session body: {{\"manifest_path\": \"{}\", \"config_path\": \"{}\"}}",
        dir.join("manifest.json").display(),
        dir.join("config.json").display()
    );
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    println!("listening on http://{addr}");
    serve(addr, AppState::new(), None).await
}
