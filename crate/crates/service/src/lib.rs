//! Network front end for the shadow store and the sweep coordinator.
//!
//! Both services speak length-delimited JSON (a 4-byte big-endian length,
//! then one JSON document) over TCP or Unix stream sockets, one request and
//! one reply per frame. The same handlers are mounted over HTTP:
//! `POST /v1/store`, `POST /v1/sweep` and `GET /health`.

use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::header;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::Router;
use d2k_core::pipeline::{evaluation_hook, Endpoint};
use d2k_core::store::{handle_store_value, ShadowStore, StoreResponse};
use d2k_core::sweep::{handle_value, Coordinator, CoordinatorOptions, SweepMessage};
use d2k_core::wire::MAX_FRAME_LEN;
use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::io::{AsyncRead, AsyncWrite};
use tokio::net::{TcpListener, UnixListener};
use tokio_util::codec::{Framed, LengthDelimitedCodec};
use tokio_util::sync::CancellationToken;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Store,
    Sweep,
}

/// The services one process hosts. With both present, accepted models are
/// evaluated against the store's evaluation records.
pub struct Services {
    pub store: Option<Arc<ShadowStore>>,
    pub sweep: Option<Arc<Coordinator>>,
}

impl Services {
    pub fn open(
        store_dir: Option<&Path>,
        repo_dir: Option<&Path>,
        config_timeout: Option<Duration>,
    ) -> Result<Self, String> {
        let store = store_dir
            .map(|d| ShadowStore::open(d).map(Arc::new))
            .transpose()
            .map_err(|e| format!("store: {e}"))?;
        let sweep = repo_dir
            .map(|d| Coordinator::open_with(d, CoordinatorOptions { config_timeout }).map(Arc::new))
            .transpose()
            .map_err(|e| format!("sweep: {e}"))?;
        if let (Some(store), Some(sweep)) = (&store, &sweep) {
            sweep.set_eval_hook(evaluation_hook(store.clone()));
        }
        Ok(Self { store, sweep })
    }

    /// Serves one encoded request; never fails, errors become replies.
    pub fn reply(&self, protocol: Protocol, request: &[u8]) -> Vec<u8> {
        let reply = match protocol {
            Protocol::Store => {
                let r = match (&self.store, serde_json::from_slice::<Value>(request)) {
                    (None, _) => StoreResponse::failure("unavailable", "this process does not host a store"),
                    (_, Err(e)) => StoreResponse::failure("malformed_request", format!("invalid JSON: {e}")),
                    (Some(store), Ok(v)) => handle_store_value(store, v),
                };
                serde_json::to_vec(&r)
            }
            Protocol::Sweep => {
                let m = match (&self.sweep, serde_json::from_slice::<Value>(request)) {
                    (None, _) => SweepMessage::error("unavailable", "this process does not host a sweep coordinator"),
                    (_, Err(e)) => SweepMessage::error("malformed_message", format!("invalid JSON: {e}")),
                    (Some(coord), Ok(v)) => handle_value(coord, v),
                };
                serde_json::to_vec(&m)
            }
        };
        reply.expect("replies serialize")
    }
}

pub enum Listener {
    Tcp(TcpListener),
    Unix(UnixListener, PathBuf),
}

impl Listener {
    /// Binds a `tcp://` or `unix://` endpoint. A stale Unix socket file is
    /// replaced.
    pub async fn bind(endpoint: &Endpoint) -> io::Result<Self> {
        match endpoint {
            Endpoint::Tcp(addr) => Ok(Listener::Tcp(TcpListener::bind(addr).await?)),
            Endpoint::Unix(path) => {
                if path.exists() {
                    std::fs::remove_file(path)?;
                }
                Ok(Listener::Unix(UnixListener::bind(path)?, path.clone()))
            }
            other => Err(io::Error::new(io::ErrorKind::InvalidInput, format!("cannot listen on {other}"))),
        }
    }

    /// The endpoint clients should use, with the bound port filled in.
    pub fn endpoint(&self) -> io::Result<Endpoint> {
        Ok(match self {
            Listener::Tcp(l) => Endpoint::Tcp(l.local_addr()?.to_string()),
            Listener::Unix(_, path) => Endpoint::Unix(path.clone()),
        })
    }
}

async fn connection<S>(stream: S, services: Arc<Services>, protocol: Protocol, cancel: CancellationToken)
where
    S: AsyncRead + AsyncWrite + Unpin,
{
    let codec = LengthDelimitedCodec::builder().max_frame_length(MAX_FRAME_LEN).new_codec();
    let mut framed = Framed::new(stream, codec);
    loop {
        let frame = tokio::select! {
            f = framed.next() => f,
            _ = cancel.cancelled() => None,
        };
        let request = match frame {
            None => break,
            Some(Ok(f)) => f.freeze(),
            Some(Err(e)) => {
                log::debug!("dropping connection: {e}");
                break;
            }
        };
        let s = services.clone();
        let reply = match tokio::task::spawn_blocking(move || s.reply(protocol, &request)).await {
            Ok(r) => r,
            Err(e) => {
                log::error!("request handler panicked: {e}");
                break;
            }
        };
        if let Err(e) = framed.send(Bytes::from(reply)).await {
            log::debug!("reply not delivered: {e}");
            break;
        }
    }
}

/// Accepts framed connections until `cancel` fires.
pub async fn serve_framed(listener: Listener, services: Arc<Services>, protocol: Protocol, cancel: CancellationToken) {
    loop {
        tokio::select! {
            _ = cancel.cancelled() => break,
            accepted = accept(&listener) => match accepted {
                Ok(Accepted::Tcp(s)) => { tokio::spawn(connection(s, services.clone(), protocol, cancel.clone())); }
                Ok(Accepted::Unix(s)) => { tokio::spawn(connection(s, services.clone(), protocol, cancel.clone())); }
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    tokio::time::sleep(Duration::from_millis(50)).await;
                }
            }
        }
    }
    if let Listener::Unix(_, path) = &listener {
        let _ = std::fs::remove_file(path);
    }
}

enum Accepted {
    Tcp(tokio::net::TcpStream),
    Unix(tokio::net::UnixStream),
}

async fn accept(listener: &Listener) -> io::Result<Accepted> {
    match listener {
        Listener::Tcp(l) => Ok(Accepted::Tcp(l.accept().await?.0)),
        Listener::Unix(l, _) => Ok(Accepted::Unix(l.accept().await?.0)),
    }
}

async fn http_call(services: Arc<Services>, protocol: Protocol, body: Bytes) -> impl IntoResponse {
    let reply = tokio::task::spawn_blocking(move || services.reply(protocol, &body))
        .await
        .unwrap_or_else(|e| {
            let err = json!({ "ok": false, "type": "error", "error": { "code": "internal", "message": e.to_string() } });
            err.to_string().into_bytes()
        });
    ([(header::CONTENT_TYPE, "application/json")], reply)
}

/// HTTP routes over the same handlers. Replies are always `200` with the
/// protocol's own success/error envelope.
pub fn router(services: Arc<Services>) -> Router {
    Router::new()
        .route("/v1/store", post(|State(s): State<Arc<Services>>, body: Bytes| http_call(s, Protocol::Store, body)))
        .route("/v1/sweep", post(|State(s): State<Arc<Services>>, body: Bytes| http_call(s, Protocol::Sweep, body)))
        .route(
            "/health",
            get(|State(s): State<Arc<Services>>| async move {
                axum::Json(json!({ "ok": true, "store": s.store.is_some(), "sweep": s.sweep.is_some() }))
            }),
        )
        .layer(axum::extract::DefaultBodyLimit::max(MAX_FRAME_LEN))
        .with_state(services)
}

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    pub store_dir: Option<PathBuf>,
    pub repo_dir: Option<PathBuf>,
    pub store_listen: Option<Endpoint>,
    pub sweep_listen: Option<Endpoint>,
    /// `host:port` for the HTTP routes.
    pub http_listen: Option<String>,
    pub config_timeout: Option<Duration>,
}

/// Endpoints a running server actually bound.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    pub store: Option<Endpoint>,
    pub sweep: Option<Endpoint>,
    pub http: Option<Endpoint>,
}

/// Opens the services and binds every requested listener.
pub async fn start(opts: &ServeOptions, cancel: CancellationToken) -> io::Result<(Bound, Vec<tokio::task::JoinHandle<()>>)> {
    let services = Services::open(opts.store_dir.as_deref(), opts.repo_dir.as_deref(), opts.config_timeout)
        .map_err(io::Error::other)?;
    if opts.store_listen.is_some() && services.store.is_none() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "store listener needs a store directory"));
    }
    if opts.sweep_listen.is_some() && services.sweep.is_none() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "sweep listener needs a repository directory"));
    }
    let services = Arc::new(services);
    let mut bound = Bound::default();
    let mut tasks = Vec::new();
    for (ep, protocol) in [(&opts.store_listen, Protocol::Store), (&opts.sweep_listen, Protocol::Sweep)] {
        let Some(ep) = ep else { continue };
        let listener = Listener::bind(ep).await?;
        let actual = listener.endpoint()?;
        log::info!("{protocol:?} service listening on {actual}");
        match protocol {
            Protocol::Store => bound.store = Some(actual),
            Protocol::Sweep => bound.sweep = Some(actual),
        }
        tasks.push(tokio::spawn(serve_framed(listener, services.clone(), protocol, cancel.clone())));
    }
    if let Some(addr) = &opts.http_listen {
        let listener = TcpListener::bind(addr).await?;
        let local: SocketAddr = listener.local_addr()?;
        log::info!("HTTP listening on http://{local}");
        bound.http = Some(Endpoint::Http(format!("http://{local}")));
        let app = router(services.clone());
        let c = cancel.clone();
        tasks.push(tokio::spawn(async move {
            if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(async move { c.cancelled().await }).await {
                log::error!("HTTP server failed: {e}");
            }
        }));
    }
    Ok((bound, tasks))
}

/// A server on its own runtime thread; dropping it shuts the server down.
pub struct Running {
    pub bound: Bound,
    cancel: CancellationToken,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl Running {
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.cancel.cancel();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Running {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Starts a server in the background and returns once it is listening.
pub fn spawn(opts: ServeOptions) -> io::Result<Running> {
    let cancel = CancellationToken::new();
    let (tx, rx) = std::sync::mpsc::channel();
    let c = cancel.clone();
    let thread = std::thread::Builder::new().name("d2k-service".into()).spawn(move || {
        let rt = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
            Ok(rt) => rt,
            Err(e) => {
                let _ = tx.send(Err(e));
                return;
            }
        };
        rt.block_on(async move {
            match start(&opts, c.clone()).await {
                Ok((bound, tasks)) => {
                    let _ = tx.send(Ok(bound));
                    for t in tasks {
                        let _ = t.await;
                    }
                }
                Err(e) => {
                    let _ = tx.send(Err(e));
                }
            }
        });
    })?;
    let bound = rx.recv().map_err(|_| io::Error::other("server thread exited"))??;
    Ok(Running { bound, cancel, thread: Some(thread) })
}

/// Runs in the foreground until Ctrl-C.
pub async fn serve_until_interrupted(opts: ServeOptions) -> io::Result<Bound> {
    let cancel = CancellationToken::new();
    let (bound, tasks) = start(&opts, cancel.clone()).await?;
    tokio::signal::ctrl_c().await?;
    log::info!("shutting down");
    cancel.cancel();
    for t in tasks {
        let _ = t.await;
    }
    Ok(bound)
}

/// [`serve_until_interrupted`] on a fresh runtime, for synchronous callers.
pub fn serve_blocking(opts: ServeOptions) -> io::Result<Bound> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build()?.block_on(serve_until_interrupted(opts))
}
