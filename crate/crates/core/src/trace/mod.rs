//! Recorded transactions and the on-disk trace format.
//!
//! A trace file holds one transaction per line:
//!
//! ```text
//! <index> TAB <base64(request)> TAB <base64(response)> LF
//! ```
//!
//! `index` is an unsigned decimal integer. Payloads use the standard base64
//! alphabet with padding, so any octet sequence survives the round trip. Empty
//! lines and lines starting with `#` are ignored on load and never written.

mod proxy;

pub use proxy::{record_proxy, ProxyConfig, ProxyError, RecorderHandle};

use std::collections::HashSet;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate transaction index {0}")]
    DuplicateIndex(u64),
    #[error("transaction {0} has an empty request or response")]
    EmptyRequestOrResponse(u64),
    #[error("trace i/o failure: {0}")]
    Io(#[from] io::Error),
}

/// One recorded request paired with the single response it produced.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Transaction {
    pub index: u64,
    pub request: Vec<u8>,
    pub response: Vec<u8>,
}

impl Transaction {
    pub fn new(index: u64, request: impl Into<Vec<u8>>, response: impl Into<Vec<u8>>) -> Self {
        Self {
            index,
            request: request.into(),
            response: response.into(),
        }
    }
}

/// An ordered collection of transactions with unique indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransactionLibrary {
    transactions: Vec<Transaction>,
}

impl TransactionLibrary {
    pub fn new(transactions: Vec<Transaction>) -> Result<Self, TraceError> {
        let mut seen = HashSet::with_capacity(transactions.len());
        for t in &transactions {
            if t.request.is_empty() || t.response.is_empty() {
                return Err(TraceError::EmptyRequestOrResponse(t.index));
            }
            if !seen.insert(t.index) {
                return Err(TraceError::DuplicateIndex(t.index));
            }
        }
        Ok(Self { transactions })
    }

    pub fn len(&self) -> usize {
        self.transactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transactions.is_empty()
    }

    pub fn transactions(&self) -> &[Transaction] {
        &self.transactions
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Transaction> {
        self.transactions.iter()
    }

    pub fn get(&self, position: usize) -> Option<&Transaction> {
        self.transactions.get(position)
    }

    pub fn position_of(&self, index: u64) -> Option<usize> {
        self.transactions.iter().position(|t| t.index == index)
    }

    /// Library restricted to the given positions, in the order given.
    pub fn subset(&self, positions: &[usize]) -> Self {
        Self {
            transactions: positions.iter().map(|&p| self.transactions[p].clone()).collect(),
        }
    }

    pub fn into_inner(self) -> Vec<Transaction> {
        self.transactions
    }
}

impl<'a> IntoIterator for &'a TransactionLibrary {
    type Item = &'a Transaction;
    type IntoIter = std::slice::Iter<'a, Transaction>;

    fn into_iter(self) -> Self::IntoIter {
        self.transactions.iter()
    }
}

pub fn encode_record(t: &Transaction) -> String {
    format!(
        "{}\t{}\t{}\n",
        t.index,
        STANDARD.encode(&t.request),
        STANDARD.encode(&t.response)
    )
}

fn decode_record(line_no: usize, line: &str) -> Result<Transaction, TraceError> {
    let malformed = |reason: String| TraceError::MalformedRecord {
        line: line_no,
        reason,
    };
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 3 {
        return Err(malformed(format!("expected 3 fields, found {}", fields.len())));
    }
    let index: u64 = fields[0]
        .parse()
        .map_err(|_| malformed(format!("bad index {:?}", fields[0])))?;
    let request = STANDARD
        .decode(fields[1])
        .map_err(|e| malformed(format!("request payload: {e}")))?;
    let response = STANDARD
        .decode(fields[2])
        .map_err(|e| malformed(format!("response payload: {e}")))?;
    if request.is_empty() {
        return Err(malformed("empty request".into()));
    }
    if response.is_empty() {
        return Err(malformed("empty response".into()));
    }
    Ok(Transaction {
        index,
        request,
        response,
    })
}

pub fn read_library<R: BufRead>(reader: R) -> Result<TransactionLibrary, TraceError> {
    let mut transactions = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let t = decode_record(i + 1, line)?;
        if !seen.insert(t.index) {
            return Err(TraceError::DuplicateIndex(t.index));
        }
        transactions.push(t);
    }
    Ok(TransactionLibrary { transactions })
}

pub fn write_library<W: Write>(library: &TransactionLibrary, mut writer: W) -> io::Result<()> {
    for t in library {
        writer.write_all(encode_record(t).as_bytes())?;
    }
    writer.flush()
}

pub fn load_library(path: impl AsRef<Path>) -> Result<TransactionLibrary, TraceError> {
    let file = fs::File::open(path)?;
    read_library(BufReader::new(file))
}

pub fn save_library(library: &TransactionLibrary, path: impl AsRef<Path>) -> Result<(), TraceError> {
    let file = fs::File::create(path)?;
    write_library(library, BufWriter::new(file))?;
    Ok(())
}
