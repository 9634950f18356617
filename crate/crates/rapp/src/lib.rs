//! PRB-forecasting rApp: an HTTP service that ingests utilization
//! telemetry into a durable per-series log, trains forecasters on demand
//! and serves quantile forecasts.
//!
//! | Method | Path | |
//! |---|---|---|
//! | POST | `/v1/series/{id}/observations` | append a batch, 202 |
//! | GET | `/v1/series/{id}/observations` | stored window |
//! | POST | `/v1/series/{id}/train` | train and deploy a model |
//! | GET | `/v1/series/{id}/forecast` | quantile forecast |
//! | GET | `/v1/series/{id}/report` | latest holdout report |
//! | GET | `/healthz` | liveness |

mod api;
pub mod config;
pub mod error;
pub mod registry;
pub mod store;

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

pub use api::router;
pub use config::{ConfigLayer, ServiceConfig};
pub use error::{ApiError, ApiResult};
pub use registry::ModelRegistry;
pub use store::SeriesStore;

#[derive(Clone)]
pub struct AppState {
    pub config: Arc<ServiceConfig>,
    pub store: Arc<SeriesStore>,
    pub registry: Arc<ModelRegistry>,
}

impl AppState {
    /// Open the data directory, replaying stored series and models.
    pub fn open(config: ServiceConfig) -> ApiResult<Self> {
        let store = SeriesStore::open(
            &config.data_dir,
            config.capacity,
            config.step_seconds,
            config.snapshot_every,
        )?;
        let registry = ModelRegistry::open(store.root().join("series"))?;
        Ok(Self {
            config: Arc::new(config),
            store: Arc::new(store),
            registry: Arc::new(registry),
        })
    }
}

/// Serve on an already bound listener until `shutdown` resolves.
pub async fn serve_on(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Bind the configured address and serve until `shutdown` resolves.
/// `on_bound` receives the actual address (useful with port 0).
pub async fn serve(
    config: ServiceConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
    on_bound: impl FnOnce(SocketAddr),
) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let addr = SocketAddr::new(config.bind, config.port);
    let state = AppState::open(config).map_err(|e| e.message)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_bound(listener.local_addr()?);
    serve_on(listener, state, shutdown).await?;
    Ok(())
}
