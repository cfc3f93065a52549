//! Runtime playback.
//!
//! A live request is scored against every node's prototype; the closest node
//! answers with its centroid response, after copying symmetric fields over
//! from the live request.

mod server;

pub use server::{serve, ServeError, ServerHandle, ServerStats};

use thiserror::Error;

use crate::protomodel::{MatchingNode, OpaqueServiceModel};
use crate::seqalign::{global_align, relative_distance, AlignError, ScoringConfig};

/// Shortest common run treated as a symmetric field.
pub const DEFAULT_MIN_FIELD_LEN: u32 = 4;

#[derive(Debug, Error, PartialEq)]
pub enum EmulatorError {
    #[error("empty request")]
    EmptyRequest,
    #[error("model has no matching nodes")]
    EmptyModel,
    #[error(transparent)]
    Align(#[from] AlignError),
}

/// A byte run shared by a transaction's request and response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SymmetricField {
    pub request_offset: usize,
    pub response_offset: usize,
    pub len: usize,
}

impl SymmetricField {
    pub fn request_range(&self) -> std::ops::Range<usize> {
        self.request_offset..self.request_offset + self.len
    }

    pub fn response_range(&self) -> std::ops::Range<usize> {
        self.response_offset..self.response_offset + self.len
    }

    /// In bounds for both messages and covering identical bytes.
    pub fn is_valid_for(&self, request: &[u8], response: &[u8]) -> bool {
        self.len > 0
            && self.request_offset + self.len <= request.len()
            && self.response_offset + self.len <= response.len()
            && request[self.request_range()] == response[self.response_range()]
    }
}

/// Longest-first greedy selection of common substrings of at least `min_len`
/// bytes that do not overlap in the response. Ties prefer the leftmost
/// response offset, then the leftmost request offset. Result is sorted by
/// response offset.
pub fn find_symmetric_fields(request: &[u8], response: &[u8], min_len: usize) -> Vec<SymmetricField> {
    let min_len = min_len.max(1);
    let mut claimed = vec![false; response.len()];
    let mut fields = Vec::new();
    let width = response.len() + 1;
    let mut run = vec![0u32; (request.len() + 1) * width];
    loop {
        // run[i][j]: length of the common run ending at request[i-1] and
        // response[j-1], never crossing a claimed response byte.
        let mut best: Option<SymmetricField> = None;
        for i in 1..=request.len() {
            for j in 1..=response.len() {
                let v = if request[i - 1] == response[j - 1] && !claimed[j - 1] {
                    run[(i - 1) * width + j - 1] + 1
                } else {
                    0
                };
                run[i * width + j] = v;
                let len = v as usize;
                if len < min_len {
                    continue;
                }
                let cand = SymmetricField {
                    request_offset: i - len,
                    response_offset: j - len,
                    len,
                };
                let better = match best {
                    None => true,
                    Some(b) => {
                        (cand.len, std::cmp::Reverse(cand.response_offset), std::cmp::Reverse(cand.request_offset))
                            > (b.len, std::cmp::Reverse(b.response_offset), std::cmp::Reverse(b.request_offset))
                    }
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        match best {
            Some(f) => {
                claimed[f.response_range()].iter_mut().for_each(|c| *c = true);
                fields.push(f);
            }
            None => break,
        }
    }
    fields.sort_by_key(|f| f.response_offset);
    fields
}

/// Distances from a request to every node, and the chosen node.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub distances: Vec<(u32, f64)>,
    pub chosen: u32,
}

impl MatchOutcome {
    pub fn chosen_distance(&self) -> f64 {
        self.distances
            .iter()
            .find(|(id, _)| *id == self.chosen)
            .map_or(1.0, |(_, d)| *d)
    }
}

/// Picks the node whose prototype is nearest by relative distance; ties go to
/// the lowest cluster id.
pub fn match_request(model: &OpaqueServiceModel, request: &[u8]) -> Result<MatchOutcome, EmulatorError> {
    if request.is_empty() {
        return Err(EmulatorError::EmptyRequest);
    }
    if model.nodes.is_empty() {
        return Err(EmulatorError::EmptyModel);
    }
    let mut distances = Vec::with_capacity(model.nodes.len());
    let mut chosen: Option<(u32, f64)> = None;
    for node in &model.nodes {
        let d = if node.prototype.is_empty() {
            1.0
        } else {
            relative_distance(&node.prototype, &node.weights, request, &model.scoring)?.value
        };
        distances.push((node.cluster_id, d));
        let better = match chosen {
            None => true,
            Some((id, best)) => d < best || (d == best && node.cluster_id < id),
        };
        if better {
            chosen = Some((node.cluster_id, d));
        }
    }
    Ok(MatchOutcome {
        distances,
        chosen: chosen.map(|(id, _)| id).unwrap_or_default(),
    })
}

/// Rewrites a recorded response for a live request.
///
/// The live request is aligned against the recorded request; each field's
/// recorded-request span is mapped to the live bytes aligned inside it
/// (including live bytes inserted within the span) and spliced into the
/// recorded response. Fields that map to no live bytes keep their recorded
/// bytes.
pub fn transform_response(
    recorded_request: &[u8],
    recorded_response: &[u8],
    fields: &[SymmetricField],
    live_request: &[u8],
    cfg: &ScoringConfig,
) -> Vec<u8> {
    if fields.is_empty() {
        return recorded_response.to_vec();
    }
    if live_request == recorded_request {
        return recorded_response.to_vec();
    }
    let aln = global_align(live_request, recorded_request, cfg);

    // Column at which each recorded-request byte sits.
    let mut column_of = Vec::with_capacity(recorded_request.len());
    for (col, sym) in aln.aligned_b.iter().enumerate() {
        if sym.is_some() {
            column_of.push(col);
        }
    }

    let mut sorted: Vec<&SymmetricField> = fields.iter().collect();
    sorted.sort_by_key(|f| f.response_offset);

    let mut out = Vec::with_capacity(recorded_response.len() + 16);
    let mut cursor = 0;
    for f in sorted {
        if f.response_offset < cursor || f.len == 0 {
            continue;
        }
        out.extend_from_slice(&recorded_response[cursor..f.response_offset]);
        let first = column_of[f.request_offset];
        let last = column_of[f.request_offset + f.len - 1];
        let projected: Vec<u8> = aln.aligned_a[first..=last].iter().flatten().copied().collect();
        if projected.is_empty() {
            out.extend_from_slice(&recorded_response[f.response_range()]);
        } else {
            out.extend_from_slice(&projected);
        }
        cursor = f.response_offset + f.len;
    }
    out.extend_from_slice(&recorded_response[cursor..]);
    out
}

pub fn generate_response(node: &MatchingNode, live_request: &[u8], cfg: &ScoringConfig) -> Vec<u8> {
    transform_response(
        &node.centroid.request,
        &node.centroid.response,
        &node.fields,
        live_request,
        cfg,
    )
}

/// A generated response together with how it was chosen.
#[derive(Debug, Clone, PartialEq)]
pub struct Emulated {
    pub response: Vec<u8>,
    pub outcome: MatchOutcome,
}

/// Shareable runtime wrapper around a model.
#[derive(Debug, Clone)]
pub struct Emulator {
    model: OpaqueServiceModel,
}

impl Emulator {
    pub fn new(model: OpaqueServiceModel) -> Result<Self, EmulatorError> {
        if model.nodes.is_empty() {
            return Err(EmulatorError::EmptyModel);
        }
        Ok(Self { model })
    }

    pub fn model(&self) -> &OpaqueServiceModel {
        &self.model
    }

    pub fn respond(&self, request: &[u8]) -> Result<Emulated, EmulatorError> {
        let outcome = match_request(&self.model, request)?;
        let node = self
            .model
            .node(outcome.chosen)
            .ok_or(EmulatorError::EmptyModel)?;
        Ok(Emulated {
            response: generate_response(node, request, &self.model.scoring),
            outcome,
        })
    }
}
