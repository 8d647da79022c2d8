//! Review API over a completed run directory.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/api/health` | liveness and current version |
//! | GET | `/api/summary` | counts, params, version (503 while re-clustering) |
//! | GET | `/api/images?flag=&page=&page_size=` | paged image listing, `image_id` ascending |
//! | GET | `/api/images/{id}/file` | raw image bytes |
//! | GET | `/api/clusters` | cluster table |
//! | GET | `/api/clusters/{id}` | members, nearest clusters |
//! | POST | `/api/recluster` | new parameters, new version |
//! | POST | `/api/decisions` | accept/override one image |
//!
//! Static UI assets are served at `/`.

pub mod api;
pub mod session;

use std::future::Future;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;

use axum::response::Html;
use axum::routing::{get, post};
use axum::Router;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

pub use session::{Session, SessionError, Snapshot};

const INDEX_HTML: &str = include_str!("index.html");

/// Builds the router. With `ui_dir`, static files come from that directory;
/// otherwise a minimal built-in page is served at `/`.
pub fn router(session: Arc<Session>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/health", get(api::health))
        .route("/api/summary", get(api::summary))
        .route("/api/images", get(api::images))
        .route("/api/images/{id}/file", get(api::image_file))
        .route("/api/clusters", get(api::clusters))
        .route("/api/clusters/{id}", get(api::cluster_detail))
        .route("/api/recluster", post(api::recluster))
        .route("/api/decisions", post(api::decide))
        .with_state(session);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(INDEX_HTML) })),
    }
}

/// Binds the loopback interface. `AddrInUse` is reported as is.
pub async fn bind(port: u16) -> std::io::Result<TcpListener> {
    TcpListener::bind(SocketAddr::from((Ipv4Addr::LOCALHOST, port))).await
}

pub async fn serve(listener: TcpListener, app: Router, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        tracing::info!(%addr, "review service listening");
    }
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
