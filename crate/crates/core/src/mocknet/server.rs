//! HTTP front end for [`MockNet`].

use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use super::MockNet;
use crate::wire::{Endpoint, EndpointError, ErrorBody, ErrorCode, ScoreRequest, SCORE_PATH};

fn json(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn error(status: StatusCode, code: ErrorCode, message: String) -> Response {
    let body = serde_json::to_string(&ErrorBody {
        error: message,
        code,
    })
    .expect("error body serializes");
    json(status, body)
}

async fn score(State(mock): State<Arc<MockNet>>, body: Bytes) -> Response {
    let request: ScoreRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => {
            return error(
                StatusCode::BAD_REQUEST,
                ErrorCode::BadRequest,
                e.to_string(),
            )
        }
    };
    let result = tokio::task::spawn_blocking(move || mock.score(&request)).await;
    match result {
        Ok(Ok(resp)) => json(
            StatusCode::OK,
            serde_json::to_string(&resp).expect("response serializes"),
        ),
        Ok(Err(EndpointError::Rejected { code, message })) => {
            error(StatusCode::BAD_REQUEST, code, message)
        }
        Ok(Err(other)) => error(
            StatusCode::INTERNAL_SERVER_ERROR,
            ErrorCode::BadRequest,
            other.to_string(),
        ),
        Err(join) => error(
            StatusCode::INTERNAL_SERVER_ERROR,
            ErrorCode::BadRequest,
            join.to_string(),
        ),
    }
}

pub fn router(mock: Arc<MockNet>) -> Router {
    Router::new()
        .route(SCORE_PATH, post(score))
        .with_state(mock)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    mock: Arc<MockNet>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> io::Result<()> {
    axum::serve(listener, router(mock))
        .with_graceful_shutdown(shutdown)
        .await
}

/// A server running on a background thread; stops when dropped.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL for [`crate::probe::HttpEndpoint::new`].
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server exits.
    pub fn wait(mut self) -> io::Result<()> {
        // dropping the sender would count as a shutdown signal
        let _keep = self.stop.take();
        match self.thread.take() {
            Some(t) => t
                .join()
                .map_err(|_| io::Error::other("server thread panicked"))?,
            None => Ok(()),
        }
    }

    pub fn stop(mut self) -> io::Result<()> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> io::Result<()> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        match self.thread.take() {
            Some(t) => t
                .join()
                .map_err(|_| io::Error::other("server thread panicked"))?,
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}

/// Binds `addr` (port 0 picks a free port) and serves on a background thread.
pub fn spawn(mock: Arc<MockNet>, addr: SocketAddr) -> io::Result<ServerHandle> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    let listener = runtime.block_on(TcpListener::bind(addr))?;
    let addr = listener.local_addr()?;
    let (stop, stopped) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        runtime.block_on(serve(listener, mock, async {
            let _ = stopped.await;
        }))
    });
    Ok(ServerHandle {
        addr,
        stop: Some(stop),
        thread: Some(thread),
    })
}
