//! HTTP front end for the SAT dialogue engine.
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | POST | `/api/session` | `{"seed"?: u64}` | 201 `{session_id, seed, node_id, greeting}` |
//! | POST | `/api/session/{id}/message` | `{"text": str}` | `{bot_utterances, node_id, recommended_exercises, detected_emotion, formality, ended}` |
//! | GET | `/api/session/{id}/history` | | `{session_id, turns}` |
//! | POST | `/api/teacher/ask` | `{"question": str}` | `{answer, score, qa_id}` |
//! | GET | `/api/health` | | `{status, format, sessions, version, assets}` |
//!
//! Errors reply `{"error": message}` with 400 (empty or malformed input),
//! 404 (unknown session), 409 (`conversation ended`) or 503 (not ready).

pub mod api;
pub mod persistence;

use std::future::Future;
use std::sync::Arc;

use satbot_core::{Deployment, Scalar};
use tokio::net::TcpListener;

pub use api::{router, AppState, Ready, ServiceError};

/// Serves `deployment` on `listener` until `shutdown` resolves.
pub async fn serve<T: Scalar>(
    deployment: Deployment<T>,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    let ready = tokio::task::spawn_blocking(move || Ready::open(deployment))
        .await
        .map_err(|e| ServiceError::Assets(e.to_string()))??;
    let state: Arc<AppState<T>> = AppState::with(ready);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await?;
    Ok(())
}
