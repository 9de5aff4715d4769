//! HTTP service over the analysis engine.
//!
//! Submissions are content-addressed: the run id is a hash of the text, the
//! effective options and the backend id, so resubmitting returns the stored
//! run. Finished runs survive restarts in the data directory.
//!
//! Routes:
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/api/analyze` | `{text, backend_id, options?}` → `{run_id, status}` |
//! | GET | `/api/runs/{id}` | run record with embedded result |
//! | GET | `/api/runs/{id}/result` | canonical analysis JSON |
//! | GET | `/api/backends` | backend descriptors |
//! | POST | `/api/bench` | `{backend_ids, items, config?, flops?}` → reports |
//! | POST | `/api/memcheck` | `{text, backend_id, mode?, prefix_tokens?}` |
//! | GET | `/api/health` | liveness |

pub mod api;
pub mod config;
pub mod store;

use std::io;

pub use api::{router, AppState, Limits};
pub use config::{ConfigError, ServiceConfig};
pub use store::{run_id, AnalysisRun, RunStatus, RunStore};

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("data directory {path}: {source}")]
    Store { path: String, source: io::Error },
    #[error("cannot listen on {bind}: {source}")]
    Bind { bind: String, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Builds the application state a config describes.
pub fn build_state(config: &ServiceConfig) -> Result<AppState, ServeError> {
    let backends = config.build_backends()?;
    let store = RunStore::open(&config.data_dir).map_err(|source| ServeError::Store {
        path: config.data_dir.display().to_string(),
        source,
    })?;
    Ok(AppState::new(
        backends,
        store,
        Limits {
            max_text_bytes: config.max_text_bytes,
            z_threshold: config.z_threshold,
        },
    ))
}

/// Serves until interrupted.
pub async fn serve(config: ServiceConfig) -> Result<(), ServeError> {
    let state = build_state(&config)?;
    let listener = tokio::net::TcpListener::bind(&config.bind)
        .await
        .map_err(|source| ServeError::Bind {
            bind: config.bind.clone(),
            source,
        })?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
