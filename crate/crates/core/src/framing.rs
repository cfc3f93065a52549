//! Message framing on byte streams.
//!
//! Each mode decides where a message ends. Payloads handed to callers never
//! include the framing bytes (length prefix or delimiter); [`write_message`]
//! adds them back.

use std::io::{self, ErrorKind, Read, Write};
use std::net::{Shutdown, TcpStream};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FramingMode {
    /// The peer half-closes its write side after each message.
    OneMessagePerConnection,
    /// A message ends once the stream has been quiet for `timeout_ms`.
    IdleTimeout,
    /// Big-endian length prefix of `width` bytes (1, 2, 4 or 8).
    LengthPrefix { width: u8 },
    /// Message ends at the first occurrence of `delimiter`.
    Delimiter { delimiter: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramingConfig {
    pub mode: FramingMode,
    /// Idle window for [`FramingMode::IdleTimeout`]; for the other modes, how
    /// long a partially received message may stall before it is abandoned.
    pub timeout_ms: u64,
}

impl Default for FramingConfig {
    fn default() -> Self {
        Self {
            mode: FramingMode::IdleTimeout,
            timeout_ms: 200,
        }
    }
}

#[derive(Debug, Error)]
pub enum FramingError {
    #[error("invalid framing configuration: {0}")]
    Invalid(String),
    #[error("message incomplete after {0} ms")]
    Timeout(u64),
    #[error("length prefix of {0} bytes exceeds the frame limit")]
    TooLarge(u64),
    #[error("framing i/o failure: {0}")]
    Io(#[from] io::Error),
}

/// Largest message accepted by the length-prefix mode.
pub const MAX_FRAME: u64 = 64 * 1024 * 1024;

impl FramingConfig {
    pub fn idle(timeout_ms: u64) -> Self {
        Self {
            mode: FramingMode::IdleTimeout,
            timeout_ms,
        }
    }

    pub fn delimiter(delimiter: impl Into<Vec<u8>>, timeout_ms: u64) -> Self {
        Self {
            mode: FramingMode::Delimiter {
                delimiter: delimiter.into(),
            },
            timeout_ms,
        }
    }

    pub fn length_prefix(width: u8, timeout_ms: u64) -> Self {
        Self {
            mode: FramingMode::LengthPrefix { width },
            timeout_ms,
        }
    }

    pub fn one_per_connection(timeout_ms: u64) -> Self {
        Self {
            mode: FramingMode::OneMessagePerConnection,
            timeout_ms,
        }
    }

    pub fn validate(&self) -> Result<(), FramingError> {
        if self.timeout_ms == 0 {
            return Err(FramingError::Invalid("timeout must be positive".into()));
        }
        match &self.mode {
            FramingMode::LengthPrefix { width } if ![1, 2, 4, 8].contains(width) => Err(
                FramingError::Invalid(format!("length prefix width {width} not in 1/2/4/8")),
            ),
            FramingMode::Delimiter { delimiter } if delimiter.is_empty() => {
                Err(FramingError::Invalid("delimiter must be non-empty".into()))
            }
            _ => Ok(()),
        }
    }

    fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

/// Result of waiting for the next message on a stream.
#[derive(Debug, PartialEq, Eq)]
pub enum Incoming {
    Message(Vec<u8>),
    /// Peer closed cleanly between messages.
    Closed,
    /// No bytes arrived within `timeout_ms`; the stream is still open.
    Idle,
}

/// Per-connection reader that keeps bytes received past a message boundary.
pub struct FramedReader {
    cfg: FramingConfig,
    pending: Vec<u8>,
    eof: bool,
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut)
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

impl FramedReader {
    pub fn new(cfg: FramingConfig) -> Self {
        Self {
            cfg,
            pending: Vec::new(),
            eof: false,
        }
    }

    pub fn config(&self) -> &FramingConfig {
        &self.cfg
    }

    /// Reads more bytes into the buffer. Returns `Ok(false)` on timeout.
    fn fill(&mut self, stream: &mut TcpStream, wait: Duration) -> Result<bool, FramingError> {
        stream.set_read_timeout(Some(wait.max(Duration::from_millis(1))))?;
        let mut buf = [0u8; 16 * 1024];
        loop {
            match stream.read(&mut buf) {
                Ok(0) => {
                    self.eof = true;
                    return Ok(true);
                }
                Ok(n) => {
                    self.pending.extend_from_slice(&buf[..n]);
                    return Ok(true);
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) if is_timeout(&e) => return Ok(false),
                Err(e) if e.kind() == ErrorKind::ConnectionReset => {
                    self.eof = true;
                    return Ok(true);
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Tries to cut a complete message out of the buffer.
    fn take_complete(&mut self) -> Result<Option<Vec<u8>>, FramingError> {
        match &self.cfg.mode {
            FramingMode::LengthPrefix { width } => {
                let w = *width as usize;
                if self.pending.len() < w {
                    return Ok(None);
                }
                let len = self.pending[..w]
                    .iter()
                    .fold(0u64, |acc, &b| (acc << 8) | b as u64);
                if len > MAX_FRAME {
                    return Err(FramingError::TooLarge(len));
                }
                let end = w + len as usize;
                if self.pending.len() < end {
                    return Ok(None);
                }
                let msg = self.pending[w..end].to_vec();
                self.pending.drain(..end);
                Ok(Some(msg))
            }
            FramingMode::Delimiter { delimiter } => match find(&self.pending, delimiter) {
                Some(pos) => {
                    let msg = self.pending[..pos].to_vec();
                    self.pending.drain(..pos + delimiter.len());
                    Ok(Some(msg))
                }
                None => Ok(None),
            },
            FramingMode::OneMessagePerConnection => {
                if self.eof && !self.pending.is_empty() {
                    Ok(Some(std::mem::take(&mut self.pending)))
                } else {
                    Ok(None)
                }
            }
            FramingMode::IdleTimeout => Ok(None),
        }
    }

    /// Waits up to `first_byte_wait` for a message to start, then applies the
    /// configured timeout while the rest arrives.
    pub fn next_message(
        &mut self,
        stream: &mut TcpStream,
        first_byte_wait: Duration,
    ) -> Result<Incoming, FramingError> {
        if let Some(msg) = self.take_complete()? {
            return Ok(Incoming::Message(msg));
        }
        if self.pending.is_empty() {
            if self.eof {
                return Ok(Incoming::Closed);
            }
            if !self.fill(stream, first_byte_wait)? {
                return Ok(Incoming::Idle);
            }
            if self.eof && self.pending.is_empty() {
                return Ok(Incoming::Closed);
            }
        }

        let timeout = self.cfg.timeout();
        let mut last_progress = Instant::now();
        loop {
            if let Some(msg) = self.take_complete()? {
                return Ok(Incoming::Message(msg));
            }
            if self.eof {
                // A dangling partial frame at EOF can never complete.
                return match self.cfg.mode {
                    FramingMode::IdleTimeout if !self.pending.is_empty() => {
                        Ok(Incoming::Message(std::mem::take(&mut self.pending)))
                    }
                    _ if self.pending.is_empty() => Ok(Incoming::Closed),
                    _ => Err(FramingError::Timeout(self.cfg.timeout_ms)),
                };
            }
            let wait = timeout.saturating_sub(last_progress.elapsed());
            if wait.is_zero() {
                return match self.cfg.mode {
                    FramingMode::IdleTimeout => {
                        Ok(Incoming::Message(std::mem::take(&mut self.pending)))
                    }
                    _ => Err(FramingError::Timeout(self.cfg.timeout_ms)),
                };
            }
            let before = self.pending.len();
            if self.fill(stream, wait)? && (self.pending.len() > before || self.eof) {
                last_progress = Instant::now();
            }
        }
    }
}

/// Writes one message with the framing bytes this mode requires.
pub fn write_message(
    stream: &mut TcpStream,
    cfg: &FramingConfig,
    payload: &[u8],
) -> Result<(), FramingError> {
    match &cfg.mode {
        FramingMode::LengthPrefix { width } => {
            let w = *width as usize;
            let len = payload.len() as u64;
            if w < 8 && len >> (8 * w) != 0 {
                return Err(FramingError::TooLarge(len));
            }
            let prefix = &len.to_be_bytes()[8 - w..];
            let mut buf = Vec::with_capacity(w + payload.len());
            buf.extend_from_slice(prefix);
            buf.extend_from_slice(payload);
            stream.write_all(&buf)?;
        }
        FramingMode::Delimiter { delimiter } => {
            let mut buf = Vec::with_capacity(payload.len() + delimiter.len());
            buf.extend_from_slice(payload);
            buf.extend_from_slice(delimiter);
            stream.write_all(&buf)?;
        }
        FramingMode::OneMessagePerConnection => {
            stream.write_all(payload)?;
            stream.flush()?;
            let _ = stream.shutdown(Shutdown::Write);
            return Ok(());
        }
        FramingMode::IdleTimeout => stream.write_all(payload)?,
    }
    stream.flush()?;
    Ok(())
}
