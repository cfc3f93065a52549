//! Offline analysis: clusters a library, aligns each cluster's requests and
//! condenses every alignment into a weighted prototype. The result is an
//! [`OpaqueServiceModel`], the artifact served at runtime.

mod format;

pub use format::{decode_model, encode_model, load_model, save_model, FORMAT_VERSION, MAGIC};

use std::fmt;

use log::warn;
use thiserror::Error;

use crate::clusterer::{cluster, request_distance_matrix_with, response_distance_matrix_with, ClusterError, ClusterSet, DistanceMatrix};
use crate::emulator::{find_symmetric_fields, SymmetricField};
use crate::msa::{align_with_tree, guide_tree_from_matrix, pairwise_matrix, AlignmentProfile};
use crate::par::Exec;
use crate::seqalign::{AlignError, ScoringConfig};
use crate::trace::{Transaction, TransactionLibrary};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error("consensus threshold {0} outside (0.5, 1]")]
    BadThreshold(f64),
    #[error("symmetric field minimum length must be positive")]
    BadFieldLength,
    #[error("model file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("model i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

/// One prototype position: a literal byte or a wildcard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProtoSymbol {
    Byte(u8),
    Wildcard,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Prototype {
    symbols: Vec<ProtoSymbol>,
}

impl Prototype {
    pub fn new(symbols: Vec<ProtoSymbol>) -> Self {
        Self { symbols }
    }

    /// Parses the display form: `?` is a wildcard, `\?` and `\\` are literal.
    pub fn parse(text: &str) -> Self {
        let mut symbols = Vec::new();
        let mut bytes = text.bytes();
        while let Some(b) = bytes.next() {
            symbols.push(match b {
                b'?' => ProtoSymbol::Wildcard,
                b'\\' => ProtoSymbol::Byte(bytes.next().unwrap_or(b'\\')),
                other => ProtoSymbol::Byte(other),
            });
        }
        Self { symbols }
    }

    pub fn symbols(&self) -> &[ProtoSymbol] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn wildcard_count(&self) -> usize {
        self.symbols.iter().filter(|s| **s == ProtoSymbol::Wildcard).count()
    }

    pub fn is_all_wildcards(&self) -> bool {
        self.wildcard_count() == self.symbols.len()
    }

    /// Maximal runs of literal bytes, in order.
    pub fn literal_runs(&self) -> Vec<Vec<u8>> {
        let mut runs = Vec::new();
        let mut cur = Vec::new();
        for s in &self.symbols {
            match s {
                ProtoSymbol::Byte(b) => cur.push(*b),
                ProtoSymbol::Wildcard => {
                    if !cur.is_empty() {
                        runs.push(std::mem::take(&mut cur));
                    }
                }
            }
        }
        if !cur.is_empty() {
            runs.push(cur);
        }
        runs
    }
}

impl fmt::Display for Prototype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.symbols {
            match s {
                ProtoSymbol::Wildcard => f.write_str("?")?,
                ProtoSymbol::Byte(b'?') => f.write_str("\\?")?,
                ProtoSymbol::Byte(b'\\') => f.write_str("\\\\")?,
                ProtoSymbol::Byte(b) if b.is_ascii_graphic() || *b == b' ' => {
                    write!(f, "{}", *b as char)?
                }
                ProtoSymbol::Byte(b) => write!(f, "\\x{b:02x}")?,
            }
        }
        Ok(())
    }
}

/// Positional weights, one per prototype symbol. Built models only produce
/// values in `(0, 1]`; any positive finite values are accepted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Weights {
    values: Vec<f64>,
}

impl Weights {
    pub fn new(values: Vec<f64>) -> Result<Self, AlignError> {
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(AlignError::InvalidScoring("weights must be positive and finite"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, AlignError> {
        Self::new(self.values.iter().map(|v| v * factor).collect())
    }
}

/// Symbol counts of one alignment column. `None` counts gaps.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ColumnCounts {
    /// Non-zero byte counts in ascending byte order.
    pub bytes: Vec<(u8, u32)>,
    pub gaps: u32,
}

impl ColumnCounts {
    pub fn count(&self, symbol: Option<u8>) -> u32 {
        match symbol {
            None => self.gaps,
            Some(b) => self
                .bytes
                .binary_search_by_key(&b, |(x, _)| *x)
                .map_or(0, |i| self.bytes[i].1),
        }
    }

    /// Most frequent symbol and its count. Ties go to the smaller byte; a gap
    /// only wins with a strictly larger count than every byte.
    pub fn mode(&self) -> (Option<u8>, u32) {
        let mut best: Option<(u8, u32)> = None;
        for &(b, c) in &self.bytes {
            if best.map_or(true, |(_, bc)| c > bc) {
                best = Some((b, c));
            }
        }
        match best {
            Some((b, c)) if c >= self.gaps => (Some(b), c),
            _ => (None, self.gaps),
        }
    }
}

/// Per-column symbol counts of an alignment profile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccurrenceTable {
    pub columns: Vec<ColumnCounts>,
    pub rows: u32,
}

impl OccurrenceTable {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

pub fn occurrence_table(profile: &AlignmentProfile) -> OccurrenceTable {
    let columns = (0..profile.width())
        .map(|c| {
            let mut counts = [0u32; 256];
            let mut gaps = 0;
            for sym in profile.column(c) {
                match sym {
                    Some(b) => counts[b as usize] += 1,
                    None => gaps += 1,
                }
            }
            ColumnCounts {
                bytes: counts
                    .iter()
                    .enumerate()
                    .filter(|(_, &n)| n > 0)
                    .map(|(b, &n)| (b as u8, n))
                    .collect(),
                gaps,
            }
        })
        .collect();
    OccurrenceTable {
        columns,
        rows: profile.row_count() as u32,
    }
}

/// A prototype plus the profile column each of its symbols came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Consensus {
    pub prototype: Prototype,
    pub columns: Vec<usize>,
}

pub fn validate_threshold(f: f64) -> Result<(), ModelError> {
    if f > 0.5 && f <= 1.0 {
        Ok(())
    } else {
        Err(ModelError::BadThreshold(f))
    }
}

/// Consensus prototype with wildcards and truncations.
///
/// For each column with modal symbol `c` at relative frequency `q`: a byte
/// mode with `q >= f` is kept literally, a gap mode with `q >= 1/2` drops the
/// column, and anything else becomes a wildcard.
pub fn consensus_prototype(table: &OccurrenceTable, f: f64) -> Consensus {
    let rows = table.rows as f64;
    let mut symbols = Vec::with_capacity(table.len());
    let mut columns = Vec::with_capacity(table.len());
    for (i, col) in table.columns.iter().enumerate() {
        let (mode, count) = col.mode();
        let q = count as f64 / rows;
        let sym = match mode {
            Some(b) if q >= f => Some(ProtoSymbol::Byte(b)),
            None if q >= 0.5 => None,
            _ => Some(ProtoSymbol::Wildcard),
        };
        if let Some(s) = sym {
            symbols.push(s);
            columns.push(i);
        }
    }
    Consensus {
        prototype: Prototype::new(symbols),
        columns,
    }
}

/// Shannon index (natural log) of a column, gaps counted as a symbol.
pub fn column_entropy(col: &ColumnCounts, rows: u32) -> f64 {
    let n = rows as f64;
    let mut h = 0.0;
    for c in col.bytes.iter().map(|(_, c)| *c).chain(std::iter::once(col.gaps)) {
        if c > 0 {
            let q = c as f64 / n;
            h -= q * q.ln();
        }
    }
    h
}

/// Inverse-entropy weights `1 / (1 + H)` for the listed profile columns.
pub fn entropy_weights(profile: &AlignmentProfile, columns: &[usize]) -> Weights {
    let table = occurrence_table(profile);
    entropy_weights_from_table(&table, columns)
}

pub fn entropy_weights_from_table(table: &OccurrenceTable, columns: &[usize]) -> Weights {
    Weights {
        values: columns
            .iter()
            .map(|&c| 1.0 / (1.0 + column_entropy(&table.columns[c], table.rows)))
            .collect(),
    }
}

/// A prototype with everything needed to answer requests that match it.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingNode {
    pub cluster_id: u32,
    pub prototype: Prototype,
    pub weights: Weights,
    pub centroid: Transaction,
    pub fields: Vec<SymmetricField>,
}

/// The deployable emulation model.
#[derive(Debug, Clone, PartialEq)]
pub struct OpaqueServiceModel {
    pub nodes: Vec<MatchingNode>,
    pub scoring: ScoringConfig,
    pub threshold: f64,
    pub min_field_len: u32,
}

impl OpaqueServiceModel {
    pub fn node(&self, cluster_id: u32) -> Option<&MatchingNode> {
        self.nodes.iter().find(|n| n.cluster_id == cluster_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildOptions {
    pub clusters: usize,
    pub threshold: f64,
    pub scoring: ScoringConfig,
    pub min_field_len: u32,
    pub exec: Exec,
}

impl BuildOptions {
    pub fn new(clusters: usize) -> Self {
        Self {
            clusters,
            threshold: 0.8,
            scoring: ScoringConfig::default(),
            min_field_len: crate::emulator::DEFAULT_MIN_FIELD_LEN,
            exec: Exec::default(),
        }
    }
}

/// Pairwise request and response distances for a library, reusable across
/// many builds over subsets of it.
#[derive(Debug, Clone)]
pub struct PairwiseCache {
    pub responses: DistanceMatrix,
    pub requests: DistanceMatrix,
}

impl PairwiseCache {
    pub fn compute(library: &TransactionLibrary, cfg: &ScoringConfig, exec: Exec) -> Result<Self, ClusterError> {
        Ok(Self {
            responses: response_distance_matrix_with(library, cfg, exec)?,
            requests: request_distance_matrix_with(library, cfg, exec)?,
        })
    }

    pub fn subset(&self, positions: &[usize]) -> Self {
        Self {
            responses: self.responses.submatrix(positions),
            requests: self.requests.submatrix(positions),
        }
    }
}

/// Everything produced on the way to a model.
#[derive(Debug, Clone)]
pub struct ModelBuild {
    pub model: OpaqueServiceModel,
    pub clusters: ClusterSet,
    pub profiles: Vec<AlignmentProfile>,
    /// Cluster ids whose prototype came out all wildcards.
    pub degenerate: Vec<u32>,
}

pub fn build_model(
    library: &TransactionLibrary,
    k: usize,
    f: f64,
    cfg: &ScoringConfig,
) -> Result<OpaqueServiceModel, ModelError> {
    let opts = BuildOptions {
        threshold: f,
        scoring: *cfg,
        ..BuildOptions::new(k)
    };
    Ok(build_model_detailed(library, &opts, None)?.model)
}

/// Runs the full analysis. `cache`, when given, must have been computed over
/// exactly `library` (same order) with the same scoring.
pub fn build_model_detailed(
    library: &TransactionLibrary,
    opts: &BuildOptions,
    cache: Option<&PairwiseCache>,
) -> Result<ModelBuild, ModelError> {
    validate_threshold(opts.threshold)?;
    opts.scoring.validate()?;
    if opts.min_field_len == 0 {
        return Err(ModelError::BadFieldLength);
    }
    if library.is_empty() {
        return Err(ClusterError::EmptyLibrary.into());
    }
    let cfg = opts.scoring;
    let response_matrix = match cache {
        Some(c) => c.responses.clone(),
        None => response_distance_matrix_with(library, &cfg, opts.exec)?,
    };
    let clusters = cluster(&response_matrix, opts.clusters)?;
    let txs = library.transactions();

    let per_cluster = opts.exec.map(&clusters.clusters, |c| {
        let requests: Vec<Vec<u8>> = c.positions.iter().map(|&p| txs[p].request.clone()).collect();
        let matrix = match cache {
            Some(cache) => cache.requests.submatrix(&c.positions),
            None => pairwise_matrix(c.members.clone(), &requests, &cfg, Exec::Sequential),
        };
        let tree = guide_tree_from_matrix(&matrix);
        let profile = align_with_tree(&tree, &requests, &cfg);
        let table = occurrence_table(&profile);
        let consensus = consensus_prototype(&table, opts.threshold);
        let weights = entropy_weights_from_table(&table, &consensus.columns);
        let centroid = txs[c.centroid_position].clone();
        let fields = find_symmetric_fields(&centroid.request, &centroid.response, opts.min_field_len as usize);
        (profile, consensus.prototype, weights, centroid, fields)
    });

    let mut nodes = Vec::with_capacity(per_cluster.len());
    let mut profiles = Vec::with_capacity(per_cluster.len());
    let mut degenerate = Vec::new();
    for (id, (profile, prototype, weights, centroid, fields)) in per_cluster.into_iter().enumerate() {
        let cluster_id = id as u32;
        if prototype.is_all_wildcards() {
            warn!("cluster {cluster_id} has an all-wildcard prototype; it can never be matched closely");
            degenerate.push(cluster_id);
        }
        profiles.push(profile);
        nodes.push(MatchingNode {
            cluster_id,
            prototype,
            weights,
            centroid,
            fields,
        });
    }

    Ok(ModelBuild {
        model: OpaqueServiceModel {
            nodes,
            scoring: cfg,
            threshold: opts.threshold,
            min_field_len: opts.min_field_len,
        },
        clusters,
        profiles,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(rows: &[&str]) -> AlignmentProfile {
        AlignmentProfile::from_rows(
            (0..rows.len() as u64).collect(),
            rows.iter()
                .map(|r| r.bytes().map(|b| if b == b'-' { None } else { Some(b) }).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn counts_single_and_double_rows() {
        let t = occurrence_table(&profile(&["AB"]));
        assert_eq!(t.columns[0].bytes, vec![(b'A', 1)]);
        assert_eq!(t.columns[1].bytes, vec![(b'B', 1)]);
        let t = occurrence_table(&profile(&["AB", "AC"]));
        assert_eq!(t.columns[1].bytes, vec![(b'B', 1), (b'C', 1)]);
        assert_eq!(t.rows, 2);
    }

    #[test]
    fn identical_rows_give_literal_prototype() {
        let p = profile(&["{id:7}", "{id:7}", "{id:7}"]);
        let c = consensus_prototype(&occurrence_table(&p), 0.8);
        assert_eq!(c.prototype.to_string(), "{id:7}");
        assert_eq!(c.columns, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn wildcards_and_truncation() {
        // col0 conserved, col1 and col3 split, col2 mostly gaps.
        let p = profile(&["AB-C", "AC-D", "ADxE", "AE-F", "AF-G"]);
        let c = consensus_prototype(&occurrence_table(&p), 0.8);
        assert_eq!(c.prototype.to_string(), "A??");
        assert_eq!(c.columns, vec![0, 1, 3]);
    }

    #[test]
    fn gap_loses_ties() {
        let col = ColumnCounts {
            bytes: vec![(b'x', 2), (b'y', 2)],
            gaps: 2,
        };
        assert_eq!(col.mode(), (Some(b'x'), 2));
        let col = ColumnCounts {
            bytes: vec![(b'x', 1)],
            gaps: 2,
        };
        assert_eq!(col.mode(), (None, 2));
    }

    #[test]
    fn entropy_weight_values() {
        let p = profile(&["AA", "AB"]);
        let w = entropy_weights(&p, &[0, 1]);
        assert_eq!(w.values()[0], 1.0);
        let expected = 1.0 / (1.0 + std::f64::consts::LN_2);
        assert!((w.values()[1] - expected).abs() < 1e-12);
        assert!((expected - 0.5907).abs() < 1e-4);
    }

    #[test]
    fn prototype_display_round_trips() {
        let p = Prototype::new(vec![
            ProtoSymbol::Byte(b'a'),
            ProtoSymbol::Wildcard,
            ProtoSymbol::Byte(b'?'),
            ProtoSymbol::Byte(b'\\'),
        ]);
        assert_eq!(p.to_string(), "a?\\?\\\\");
        assert_eq!(Prototype::parse(&p.to_string()), p);
        assert_eq!(p.literal_runs(), vec![b"a".to_vec(), b"?\\".to_vec()]);
    }

    #[test]
    fn identical_library_builds_verbatim_prototype() {
        let txs = (0..6)
            .map(|i| Transaction::new(i, "{id:5,op:A,sn:X}", "{id:5,op:AddRsp}"))
            .collect();
        let lib = TransactionLibrary::new(txs).unwrap();
        let m = build_model(&lib, 1, 0.8, &ScoringConfig::default()).unwrap();
        assert_eq!(m.nodes.len(), 1);
        assert_eq!(m.nodes[0].prototype.to_string(), "{id:5,op:A,sn:X}");
        assert!(m.nodes[0].weights.values().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn bad_threshold_rejected() {
        let lib = TransactionLibrary::new(vec![Transaction::new(0, "a", "b")]).unwrap();
        for f in [0.5, 0.0, 1.01] {
            assert!(matches!(
                build_model(&lib, 1, f, &ScoringConfig::default()),
                Err(ModelError::BadThreshold(_))
            ));
        }
        assert!(matches!(
            build_model(&lib, 2, 0.8, &ScoringConfig::default()),
            Err(ModelError::Cluster(ClusterError::BadK { k: 2, n: 1 }))
        ));
    }
}
