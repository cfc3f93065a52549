//! Recording proxy: sits between a client and the real service and captures
//! each framed request together with the framed response it produced.
//!
//! Pairing is strictly sequential per connection: one request is forwarded,
//! the proxy waits for one response, and only then reads the next request.

use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{info, warn};
use thiserror::Error;

use super::{save_library, TraceError, Transaction, TransactionLibrary};
use crate::framing::{write_message, FramedReader, FramingConfig, FramingError, Incoming};

const POLL: Duration = Duration::from_millis(100);

#[derive(Debug, Error)]
pub enum ProxyError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error("target {0} unreachable or closed before replying")]
    TargetUnreachable(String),
    #[error("no response within {0} ms")]
    FramingTimeout(u64),
    #[error(transparent)]
    Framing(#[from] FramingError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone)]
pub struct ProxyConfig {
    pub listen: String,
    pub target: String,
    pub framing: FramingConfig,
    /// How long to wait for the service to start replying to a request.
    pub response_timeout: Duration,
    /// Where the library is written on shutdown.
    pub out: Option<PathBuf>,
}

impl ProxyConfig {
    pub fn new(listen: impl Into<String>, target: impl Into<String>, framing: FramingConfig) -> Self {
        Self {
            listen: listen.into(),
            target: target.into(),
            framing,
            response_timeout: Duration::from_secs(5),
            out: None,
        }
    }
}

struct Shared {
    cfg: ProxyConfig,
    stop: AtomicBool,
    recorded: Mutex<Vec<Transaction>>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

impl Shared {
    fn record(&self, request: Vec<u8>, response: Vec<u8>) {
        let mut lib = self.recorded.lock().unwrap();
        let index = lib.len() as u64;
        lib.push(Transaction {
            index,
            request,
            response,
        });
    }
}

/// Running recorder. Dropping it without calling [`RecorderHandle::shutdown`]
/// leaves the listener thread running until process exit.
pub struct RecorderHandle {
    shared: Arc<Shared>,
    addr: SocketAddr,
    acceptor: Option<JoinHandle<()>>,
}

/// Starts recording. Returns once the listener is bound.
pub fn record_proxy(cfg: ProxyConfig) -> Result<RecorderHandle, ProxyError> {
    cfg.framing.validate()?;
    let listener = TcpListener::bind(&cfg.listen).map_err(|source| ProxyError::Bind {
        addr: cfg.listen.clone(),
        source,
    })?;
    let addr = listener.local_addr().map_err(|source| ProxyError::Bind {
        addr: cfg.listen.clone(),
        source,
    })?;
    let shared = Arc::new(Shared {
        cfg,
        stop: AtomicBool::new(false),
        recorded: Mutex::new(Vec::new()),
        workers: Mutex::new(Vec::new()),
    });
    let accept_shared = Arc::clone(&shared);
    let acceptor = thread::spawn(move || {
        for conn in listener.incoming() {
            if accept_shared.stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(client) = conn else { continue };
            let conn_shared = Arc::clone(&accept_shared);
            let worker = thread::spawn(move || {
                if let Err(e) = handle_client(&conn_shared, client) {
                    warn!("recording connection ended: {e}");
                }
            });
            accept_shared.workers.lock().unwrap().push(worker);
        }
    });
    info!("recording on {addr} -> {}", shared.cfg.target);
    Ok(RecorderHandle {
        shared,
        addr,
        acceptor: Some(acceptor),
    })
}

impl RecorderHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn recorded_count(&self) -> usize {
        self.shared.recorded.lock().unwrap().len()
    }

    /// Stops accepting, waits for open connections to wind down and returns
    /// the library, persisting it when an output path was configured.
    pub fn shutdown(mut self) -> Result<TransactionLibrary, ProxyError> {
        self.shared.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        let workers: Vec<_> = self.shared.workers.lock().unwrap().drain(..).collect();
        for w in workers {
            let _ = w.join();
        }
        let recorded = std::mem::take(&mut *self.shared.recorded.lock().unwrap());
        let library = TransactionLibrary::new(recorded)?;
        if let Some(out) = &self.shared.cfg.out {
            save_library(&library, out)?;
        }
        Ok(library)
    }
}

fn connect_target(target: &str) -> Result<TcpStream, ProxyError> {
    let addrs = target
        .to_socket_addrs()
        .map_err(|_| ProxyError::TargetUnreachable(target.to_string()))?;
    for addr in addrs {
        if let Ok(s) = TcpStream::connect_timeout(&addr, Duration::from_secs(5)) {
            let _ = s.set_nodelay(true);
            return Ok(s);
        }
    }
    Err(ProxyError::TargetUnreachable(target.to_string()))
}

/// Reads one request from the client, waiting while checking for shutdown.
fn next_request(
    shared: &Shared,
    reader: &mut FramedReader,
    client: &mut TcpStream,
) -> Result<Option<Vec<u8>>, ProxyError> {
    loop {
        match reader.next_message(client, POLL)? {
            Incoming::Message(m) => return Ok(Some(m)),
            Incoming::Closed => return Ok(None),
            Incoming::Idle if shared.stop.load(Ordering::SeqCst) => return Ok(None),
            Incoming::Idle => continue,
        }
    }
}

fn await_response(
    shared: &Shared,
    reader: &mut FramedReader,
    upstream: &mut TcpStream,
) -> Result<Vec<u8>, ProxyError> {
    match reader.next_message(upstream, shared.cfg.response_timeout)? {
        Incoming::Message(m) => Ok(m),
        Incoming::Closed => Err(ProxyError::TargetUnreachable(shared.cfg.target.clone())),
        Incoming::Idle => Err(ProxyError::FramingTimeout(
            shared.cfg.response_timeout.as_millis() as u64,
        )),
    }
}

fn handle_client(shared: &Shared, mut client: TcpStream) -> Result<(), ProxyError> {
    if shared.stop.load(Ordering::SeqCst) {
        return Ok(());
    }
    let _ = client.set_nodelay(true);
    let framing = shared.cfg.framing.clone();
    let mut from_client = FramedReader::new(framing.clone());

    if framing.mode == crate::framing::FramingMode::OneMessagePerConnection {
        let Some(request) = next_request(shared, &mut from_client, &mut client)? else {
            return Ok(());
        };
        let mut upstream = connect_target(&shared.cfg.target)?;
        write_message(&mut upstream, &framing, &request)?;
        let mut from_target = FramedReader::new(framing.clone());
        let response = await_response(shared, &mut from_target, &mut upstream)?;
        write_message(&mut client, &framing, &response)?;
        shared.record(request, response);
        return Ok(());
    }

    let mut upstream = connect_target(&shared.cfg.target)?;
    let mut from_target = FramedReader::new(framing.clone());
    while let Some(request) = next_request(shared, &mut from_client, &mut client)? {
        write_message(&mut upstream, &framing, &request)?;
        let response = match await_response(shared, &mut from_target, &mut upstream) {
            Ok(r) => r,
            Err(e) => {
                // Pairing is lost once a response goes missing; drop both ends.
                warn!("dropping unanswered request of {} bytes: {e}", request.len());
                return Err(e);
            }
        };
        write_message(&mut client, &framing, &response)?;
        shared.record(request, response);
    }
    Ok(())
}
