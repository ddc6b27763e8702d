//! HTTP facade over one analysis folder: map payloads, slices, contrasts,
//! sub-population maps, threshold masks and live EM monitoring.
//!
//! Map payloads are little-endian float32 over the masked voxels, with a
//! JSON sidecar in the `x-hint-map` response header. IC, subject and
//! covariate indices in URLs are 1-based, like the map file names.

mod api;
mod error;
mod maps;
mod session;

pub use api::router;
pub use error::ApiError;
pub use maps::{MapPayload, MapRef, Sidecar};
pub use session::{EmEvent, EmStatus, Session};

use std::net::SocketAddr;
use std::sync::Arc;

/// Serves `session` until the process is stopped.
pub async fn serve(session: Arc<Session>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("serving {} on http://{}", session.prefix(), listener.local_addr()?);
    axum::serve(listener, router(session)).await
}
