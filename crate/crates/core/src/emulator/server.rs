use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use log::{info, warn};
use thiserror::Error;

use super::Emulator;
use crate::framing::{write_message, FramedReader, FramingConfig, FramingError, FramingMode, Incoming};

const POLL: Duration = Duration::from_millis(100);

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Framing(#[from] FramingError),
}

/// Counters shared by every connection handler.
#[derive(Debug, Default)]
pub struct ServerStats {
    pub connections: AtomicU64,
    pub exchanges: AtomicU64,
    pub framing_timeouts: AtomicU64,
    pub failures: AtomicU64,
}

struct Shared {
    emulator: Emulator,
    framing: FramingConfig,
    stop: AtomicBool,
    stats: ServerStats,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

pub struct ServerHandle {
    shared: Arc<Shared>,
    addr: SocketAddr,
    acceptor: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> &ServerStats {
        &self.shared.stats
    }

    /// Blocks until the listener stops (only after [`ServerHandle::shutdown`]
    /// from another handle owner, or process exit).
    pub fn wait(mut self) {
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
    }

    pub fn shutdown(mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        let workers: Vec<_> = self.shared.workers.lock().unwrap().drain(..).collect();
        for w in workers {
            let _ = w.join();
        }
    }
}

/// Serves the model on `listen`, one thread per connection. Returns once the
/// listener is bound.
pub fn serve(emulator: Emulator, listen: &str, framing: FramingConfig) -> Result<ServerHandle, ServeError> {
    framing.validate()?;
    let listener = TcpListener::bind(listen).map_err(|source| ServeError::Bind {
        addr: listen.to_string(),
        source,
    })?;
    let addr = listener.local_addr().map_err(|source| ServeError::Bind {
        addr: listen.to_string(),
        source,
    })?;
    let shared = Arc::new(Shared {
        emulator,
        framing,
        stop: AtomicBool::new(false),
        stats: ServerStats::default(),
        workers: Mutex::new(Vec::new()),
    });
    let accept_shared = Arc::clone(&shared);
    let acceptor = thread::spawn(move || {
        for conn in listener.incoming() {
            if accept_shared.stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = conn else { continue };
            accept_shared.stats.connections.fetch_add(1, Ordering::Relaxed);
            let conn_shared = Arc::clone(&accept_shared);
            let worker = thread::spawn(move || handle_connection(&conn_shared, stream));
            let mut workers = accept_shared.workers.lock().unwrap();
            workers.retain(|w| !w.is_finished());
            workers.push(worker);
        }
    });
    info!(
        "serving {} nodes on {addr}",
        shared.emulator.model().nodes.len()
    );
    Ok(ServerHandle {
        shared,
        addr,
        acceptor: Some(acceptor),
    })
}

fn handle_connection(shared: &Shared, mut stream: TcpStream) {
    let _ = stream.set_nodelay(true);
    let peer = stream
        .peer_addr()
        .map(|a| a.to_string())
        .unwrap_or_else(|_| "?".into());
    let mut reader = FramedReader::new(shared.framing.clone());
    loop {
        let request = match reader.next_message(&mut stream, POLL) {
            Ok(Incoming::Message(m)) => m,
            Ok(Incoming::Closed) => return,
            Ok(Incoming::Idle) => {
                if shared.stop.load(Ordering::SeqCst) {
                    return;
                }
                continue;
            }
            Err(FramingError::Timeout(ms)) => {
                shared.stats.framing_timeouts.fetch_add(1, Ordering::Relaxed);
                warn!("peer={peer} framing timeout after {ms} ms; closing");
                return;
            }
            Err(e) => {
                shared.stats.failures.fetch_add(1, Ordering::Relaxed);
                warn!("peer={peer} read failed: {e}");
                return;
            }
        };
        if request.is_empty() {
            continue;
        }
        let started = Instant::now();
        let emulated = match shared.emulator.respond(&request) {
            Ok(e) => e,
            Err(e) => {
                shared.stats.failures.fetch_add(1, Ordering::Relaxed);
                warn!("peer={peer} cannot answer request: {e}");
                return;
            }
        };
        if let Err(e) = write_message(&mut stream, &shared.framing, &emulated.response) {
            shared.stats.failures.fetch_add(1, Ordering::Relaxed);
            warn!("peer={peer} write failed: {e}");
            return;
        }
        shared.stats.exchanges.fetch_add(1, Ordering::Relaxed);
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        info!(
            "exchange ts_ms={ts} peer={peer} cluster={} d_rel={:.6} latency_us={}",
            emulated.outcome.chosen,
            emulated.outcome.chosen_distance(),
            started.elapsed().as_micros()
        );
        if shared.framing.mode == FramingMode::OneMessagePerConnection {
            return;
        }
    }
}
