//! Blocking clients for the store and sweep services.
//!
//! [`connect`] turns a pair of endpoints into [`StoreApi`] and [`SweepApi`]
//! handles: `local:<dir>` opens the directory in process, `tcp://` and
//! `unix://` speak length-delimited JSON frames, `http://` posts to the
//! service's HTTP routes. Transport failures surface as error replies with
//! code `unavailable`.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::TcpStream;
use std::os::unix::net::UnixStream;
use std::sync::Arc;

use d2k_core::pipeline::{evaluation_hook, Endpoint, LocalStore, LocalSweep, StoreApi, SweepApi};
use d2k_core::store::{ShadowStore, StoreRequest, StoreResponse};
use d2k_core::sweep::{Coordinator, SweepMessage};
use d2k_core::wire::{read_frame, write_frame};
use parking_lot::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("{endpoint}: {message}")]
    Unreachable { endpoint: String, message: String },
    #[error("{0}")]
    Open(String),
}

trait Stream: Read + Write + Send {}
impl<T: Read + Write + Send> Stream for T {}

struct Connection {
    reader: BufReader<Box<dyn Stream>>,
    writer: BufWriter<Box<dyn Stream>>,
}

enum Kind {
    Framed(Mutex<Option<Connection>>),
    Http(reqwest::blocking::Client, String),
}

/// One request/reply channel to a remote service.
pub struct Transport {
    endpoint: Endpoint,
    kind: Kind,
}

fn open_stream(endpoint: &Endpoint) -> io::Result<Connection> {
    let (r, w): (Box<dyn Stream>, Box<dyn Stream>) = match endpoint {
        Endpoint::Tcp(addr) => {
            let s = TcpStream::connect(addr)?;
            s.set_nodelay(true)?;
            (Box::new(s.try_clone()?), Box::new(s))
        }
        Endpoint::Unix(path) => {
            let s = UnixStream::connect(path)?;
            (Box::new(s.try_clone()?), Box::new(s))
        }
        other => return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("{other} is not a socket endpoint"))),
    };
    Ok(Connection { reader: BufReader::new(r), writer: BufWriter::new(w) })
}

impl Transport {
    /// `route` is the HTTP path used for `http://` endpoints.
    pub fn new(endpoint: &Endpoint, route: &str) -> Result<Self, ClientError> {
        let kind = match endpoint {
            Endpoint::Tcp(_) | Endpoint::Unix(_) => Kind::Framed(Mutex::new(None)),
            Endpoint::Http(base) => {
                let client = reqwest::blocking::Client::builder()
                    .timeout(None)
                    .build()
                    .map_err(|e| ClientError::Open(e.to_string()))?;
                Kind::Http(client, format!("{base}{route}"))
            }
            Endpoint::Local(_) => return Err(ClientError::Open(format!("{endpoint} is not remote"))),
        };
        Ok(Self { endpoint: endpoint.clone(), kind })
    }

    fn unreachable(&self, e: impl std::fmt::Display) -> ClientError {
        ClientError::Unreachable { endpoint: self.endpoint.to_string(), message: e.to_string() }
    }

    /// Sends one request and waits for its reply. A framed connection is
    /// opened on first use and dropped after any I/O error.
    pub fn roundtrip(&self, request: &[u8]) -> Result<Vec<u8>, ClientError> {
        match &self.kind {
            Kind::Framed(slot) => {
                let mut slot = slot.lock();
                if slot.is_none() {
                    *slot = Some(open_stream(&self.endpoint).map_err(|e| self.unreachable(e))?);
                }
                let conn = slot.as_mut().expect("connection opened above");
                let result = write_frame(&mut conn.writer, request)
                    .and_then(|_| conn.writer.flush())
                    .and_then(|_| read_frame(&mut conn.reader))
                    .and_then(|f| f.ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "server closed the connection")));
                if result.is_err() {
                    *slot = None;
                }
                result.map_err(|e| self.unreachable(e))
            }
            Kind::Http(client, url) => {
                let resp = client
                    .post(url)
                    .header("content-type", "application/json")
                    .body(request.to_vec())
                    .send()
                    .map_err(|e| self.unreachable(e))?;
                if !resp.status().is_success() {
                    return Err(self.unreachable(format!("HTTP {}", resp.status())));
                }
                resp.bytes().map(|b| b.to_vec()).map_err(|e| self.unreachable(e))
            }
        }
    }

    /// Checks that the service answers.
    pub fn probe(&self) -> Result<(), ClientError> {
        match &self.kind {
            Kind::Framed(_) => {
                let mut slot = match &self.kind {
                    Kind::Framed(s) => s.lock(),
                    Kind::Http(..) => unreachable!(),
                };
                if slot.is_none() {
                    *slot = Some(open_stream(&self.endpoint).map_err(|e| self.unreachable(e))?);
                }
                Ok(())
            }
            Kind::Http(client, url) => {
                let base = url.rsplit_once("/v1/").map_or(url.as_str(), |(b, _)| b);
                let resp = client.get(format!("{base}/health")).send().map_err(|e| self.unreachable(e))?;
                if resp.status().is_success() {
                    Ok(())
                } else {
                    Err(self.unreachable(format!("health check returned HTTP {}", resp.status())))
                }
            }
        }
    }
}

pub struct RemoteStore(pub Transport);

impl RemoteStore {
    pub fn new(endpoint: &Endpoint) -> Result<Self, ClientError> {
        Ok(Self(Transport::new(endpoint, "/v1/store")?))
    }
}

impl StoreApi for RemoteStore {
    fn call(&self, request: StoreRequest) -> StoreResponse {
        let body = serde_json::to_vec(&request).expect("requests serialize");
        match self.0.roundtrip(&body) {
            Ok(reply) => serde_json::from_slice(&reply)
                .unwrap_or_else(|e| StoreResponse::failure("malformed_response", e.to_string())),
            Err(e) => StoreResponse::failure("unavailable", e.to_string()),
        }
    }
}

pub struct RemoteSweep(pub Transport);

impl RemoteSweep {
    pub fn new(endpoint: &Endpoint) -> Result<Self, ClientError> {
        Ok(Self(Transport::new(endpoint, "/v1/sweep")?))
    }
}

impl SweepApi for RemoteSweep {
    fn call(&self, message: SweepMessage) -> SweepMessage {
        let body = serde_json::to_vec(&message).expect("messages serialize");
        match self.0.roundtrip(&body) {
            Ok(reply) => serde_json::from_slice(&reply)
                .unwrap_or_else(|e| SweepMessage::error("malformed_response", e.to_string())),
            Err(e) => SweepMessage::error("unavailable", e.to_string()),
        }
    }
}

pub struct Connections {
    pub store: Arc<dyn StoreApi>,
    pub sweep: Arc<dyn SweepApi>,
}

pub fn connect_store(endpoint: &Endpoint) -> Result<Arc<dyn StoreApi>, ClientError> {
    Ok(match endpoint {
        Endpoint::Local(dir) => {
            Arc::new(LocalStore(Arc::new(ShadowStore::open(dir).map_err(|e| ClientError::Open(e.to_string()))?)))
        }
        other => Arc::new(RemoteStore::new(other)?),
    })
}

/// Opens a local coordinator (evaluating against `store` when given) or a
/// remote one.
pub fn connect_sweep(endpoint: &Endpoint, store: Option<Arc<ShadowStore>>) -> Result<Arc<dyn SweepApi>, ClientError> {
    Ok(match endpoint {
        Endpoint::Local(dir) => {
            let coord = Coordinator::open(dir).map_err(|e| ClientError::Open(e.to_string()))?;
            if let Some(store) = store {
                coord.set_eval_hook(evaluation_hook(store));
            }
            Arc::new(LocalSweep(Arc::new(coord)))
        }
        other => Arc::new(RemoteSweep::new(other)?),
    })
}

/// Connects both services. When both are local they share one store so the
/// coordinator can evaluate accepted models.
pub fn connect(store: &Endpoint, sweep: &Endpoint) -> Result<Connections, ClientError> {
    match store {
        Endpoint::Local(dir) => {
            let local = Arc::new(ShadowStore::open(dir).map_err(|e| ClientError::Open(e.to_string()))?);
            Ok(Connections {
                sweep: connect_sweep(sweep, Some(local.clone()))?,
                store: Arc::new(LocalStore(local)),
            })
        }
        other => Ok(Connections { store: Arc::new(RemoteStore::new(other)?), sweep: connect_sweep(sweep, None)? }),
    }
}

/// Fails unless `endpoint` answers (local directories always do).
pub fn probe(endpoint: &Endpoint) -> Result<(), ClientError> {
    match endpoint {
        Endpoint::Local(_) => Ok(()),
        other => Transport::new(other, "/v1/store")?.probe(),
    }
}
