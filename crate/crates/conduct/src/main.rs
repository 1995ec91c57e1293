use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::Parser;
use dacrm_conduct::{router, AppState, Store};

/// Serve the trial-conduct API.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// Directory holding the trial logs; created if absent.
    #[arg(long, default_value = "conduct-data")]
    data_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Require `Authorization: Bearer <token>` on every request.
    #[arg(long, env = "DACRM_CONDUCT_TOKEN")]
    token: Option<String>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let store = Store::open(&args.data_dir).with_context(|| format!("opening {}", args.data_dir.display()))?;
    eprintln!(
        "recovered {} trial(s) from {}",
        store.ids().await.len(),
        args.data_dir.display()
    );
    let app = router(AppState {
        store: Arc::new(store),
        token: args.token,
    });
    let listener = tokio::net::TcpListener::bind(args.addr).await?;
    eprintln!("listening on {}", args.addr);
    axum::serve(listener, app).await?;
    Ok(())
}
