//! The three response generators compared by the harness.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::emulator::{find_symmetric_fields, transform_response, Emulator, SymmetricField};
use crate::protomodel::{build_model_detailed, BuildOptions, PairwiseCache};
use crate::seqalign::{distance, ScoringConfig};
use crate::trace::TransactionLibrary;

/// Something that answers requests once trained.
pub trait Responder: Send + Sync {
    /// `None` means the responder has nothing to say for this request.
    fn respond(&self, request: &[u8]) -> Option<Vec<u8>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponderKind {
    Hash,
    WholeLibrary,
    Prototype,
}

impl ResponderKind {
    pub const ALL: [ResponderKind; 3] = [ResponderKind::Hash, ResponderKind::WholeLibrary, ResponderKind::Prototype];

    pub fn name(self) -> &'static str {
        match self {
            ResponderKind::Hash => "hash",
            ResponderKind::WholeLibrary => "whole-library",
            ResponderKind::Prototype => "prototype",
        }
    }
}

impl fmt::Display for ResponderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ResponderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown responder {s:?} (expected hash, whole-library or prototype)"))
    }
}

/// Exact-bytes replay. The first recorded transaction wins on duplicates.
#[derive(Debug, Clone)]
pub struct HashLookup {
    table: HashMap<Vec<u8>, Vec<u8>>,
}

impl HashLookup {
    pub fn new(library: &TransactionLibrary) -> Self {
        let mut table = HashMap::with_capacity(library.len());
        for t in library {
            table.entry(t.request.clone()).or_insert_with(|| t.response.clone());
        }
        Self { table }
    }
}

impl Responder for HashLookup {
    fn respond(&self, request: &[u8]) -> Option<Vec<u8>> {
        self.table.get(request).cloned()
    }
}

/// Nearest recorded request across the entire library.
#[derive(Debug, Clone)]
pub struct WholeLibrary {
    library: TransactionLibrary,
    fields: Vec<Vec<SymmetricField>>,
    scoring: ScoringConfig,
}

impl WholeLibrary {
    pub fn new(library: TransactionLibrary, scoring: ScoringConfig, min_field_len: usize) -> Result<Self, HarnessError> {
        if library.is_empty() {
            return Err(HarnessError::EmptyLibrary);
        }
        scoring.validate()?;
        let fields = library
            .iter()
            .map(|t| find_symmetric_fields(&t.request, &t.response, min_field_len))
            .collect();
        Ok(Self {
            library,
            fields,
            scoring,
        })
    }

    /// Position of the nearest recorded request; ties go to the lowest
    /// transaction index.
    pub fn nearest(&self, request: &[u8]) -> Result<usize, HarnessError> {
        let mut best: Option<(f64, u64, usize)> = None;
        for (pos, t) in self.library.iter().enumerate() {
            let d = distance(request, &t.request, &self.scoring)?;
            let better = match best {
                None => true,
                Some((bd, bi, _)) => d < bd || (d == bd && t.index < bi),
            };
            if better {
                best = Some((d, t.index, pos));
            }
        }
        Ok(best.expect("library is non-empty").2)
    }

    pub fn answer(&self, request: &[u8]) -> Result<Vec<u8>, HarnessError> {
        let pos = self.nearest(request)?;
        let t = &self.library.transactions()[pos];
        Ok(transform_response(
            &t.request,
            &t.response,
            &self.fields[pos],
            request,
            &self.scoring,
        ))
    }
}

impl Responder for WholeLibrary {
    fn respond(&self, request: &[u8]) -> Option<Vec<u8>> {
        self.answer(request).ok()
    }
}

impl Responder for Emulator {
    fn respond(&self, request: &[u8]) -> Option<Vec<u8>> {
        Emulator::respond(self, request).ok().map(|e| e.response)
    }
}

pub fn hash_lookup_responder(library: &TransactionLibrary, request: &[u8]) -> Option<Vec<u8>> {
    library
        .iter()
        .find(|t| t.request == request)
        .map(|t| t.response.clone())
}

pub fn whole_library_responder(
    library: &TransactionLibrary,
    request: &[u8],
    cfg: &ScoringConfig,
) -> Result<Vec<u8>, HarnessError> {
    WholeLibrary::new(library.clone(), *cfg, crate::emulator::DEFAULT_MIN_FIELD_LEN as usize)?.answer(request)
}

/// Trains a responder of the given kind. `cache`, if present, must cover
/// exactly `library` and is only consulted by the prototype responder.
pub fn train(
    kind: ResponderKind,
    library: &TransactionLibrary,
    opts: &BuildOptions,
    cache: Option<&PairwiseCache>,
) -> Result<Box<dyn Responder>, HarnessError> {
    Ok(match kind {
        ResponderKind::Hash => Box::new(HashLookup::new(library)),
        ResponderKind::WholeLibrary => Box::new(WholeLibrary::new(
            library.clone(),
            opts.scoring,
            opts.min_field_len as usize,
        )?),
        ResponderKind::Prototype => {
            let build = build_model_detailed(library, opts, cache)?;
            Box::new(Emulator::new(build.model)?)
        }
    })
}
