//! Judge protocol service: per-judge randomized queues, append-only ballots,
//! unanimous consensus at a quorum, and `labels.jsonl` export.
//!
//! The HTTP layer is a thin JSON mapping over [`LabelService`]; see the
//! workspace README for payload examples.

mod http;
mod service;

use std::future::Future;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

pub use http::router;
pub use service::{
    BallotReceipt, BallotRequest, ConsensusEntry, JudgeProgress, LabelService, Progress, QueueView, ServiceConfig,
    ServiceError, BALLOTS_FILE, DEFAULT_QUORUM,
};

/// Loopback only; this is a desk tool.
pub const DEFAULT_ADDR: ([u8; 4], u16) = ([127, 0, 0, 1], 8700);

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    service: Arc<LabelService>,
    ui_dir: Option<&Path>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let addr: Option<SocketAddr> = listener.local_addr().ok();
    if let Some(a) = addr {
        log::info!("label service listening on http://{a}");
    }
    axum::serve(listener, router(service, ui_dir)).with_graceful_shutdown(shutdown).await
}
