//! Groups transactions by operation type.
//!
//! Transactions are compared by the normalised Needleman-Wunsch distance of
//! their responses and grouped with average-linkage agglomerative clustering,
//! cut at a caller-supplied number of clusters. The same agglomeration (UPGMA)
//! drives the guide tree of the multiple sequence aligner.

use thiserror::Error;

use crate::par::Exec;
use crate::seqalign::{distance_unchecked, ScoringConfig};
use crate::trace::TransactionLibrary;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("cannot cluster an empty library")]
    EmptyLibrary,
    #[error("cluster count {k} outside 1..={n}")]
    BadK { k: usize, n: usize },
    #[error("invalid distance matrix: {0}")]
    InvalidMatrix(String),
}

/// Symmetric pairwise distances with zero diagonal, labelled by transaction
/// index.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    labels: Vec<u64>,
    values: Vec<f64>,
}

impl DistanceMatrix {
    /// Builds a matrix from a full row-major `n x n` table, checking the
    /// matrix invariants.
    pub fn new(labels: Vec<u64>, values: Vec<f64>) -> Result<Self, ClusterError> {
        let n = labels.len();
        if values.len() != n * n {
            return Err(ClusterError::InvalidMatrix(format!(
                "{} values for {n} labels",
                values.len()
            )));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(ClusterError::InvalidMatrix(format!("non-zero diagonal at {i}")));
            }
            for j in 0..n {
                let v = values[i * n + j];
                if !(0.0..=1.0).contains(&v) {
                    return Err(ClusterError::InvalidMatrix(format!("entry ({i},{j}) = {v}")));
                }
                if v != values[j * n + i] {
                    return Err(ClusterError::InvalidMatrix(format!("asymmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self { labels, values })
    }

    /// Evaluates `f` on every unordered pair `i < j` and mirrors the result.
    pub fn from_fn<F>(labels: Vec<u64>, exec: Exec, f: F) -> Self
    where
        F: Fn(usize, usize) -> f64 + Sync + Send,
    {
        let n = labels.len();
        let rows = exec.map_range(n, |i| ((i + 1)..n).map(|j| f(i, j)).collect::<Vec<_>>());
        let mut values = vec![0.0; n * n];
        for (i, row) in rows.into_iter().enumerate() {
            for (off, v) in row.into_iter().enumerate() {
                let j = i + 1 + off;
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        Self { labels, values }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u64] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.labels.len() + j]
    }

    /// Matrix restricted to the given positions, in that order.
    pub fn submatrix(&self, positions: &[usize]) -> Self {
        let m = positions.len();
        let mut values = Vec::with_capacity(m * m);
        for &i in positions {
            for &j in positions {
                values.push(self.get(i, j));
            }
        }
        Self {
            labels: positions.iter().map(|&p| self.labels[p]).collect(),
            values,
        }
    }
}

/// Pairwise response distances over a library.
pub fn response_distance_matrix(
    library: &TransactionLibrary,
    cfg: &ScoringConfig,
) -> Result<DistanceMatrix, ClusterError> {
    response_distance_matrix_with(library, cfg, Exec::default())
}

pub fn response_distance_matrix_with(
    library: &TransactionLibrary,
    cfg: &ScoringConfig,
    exec: Exec,
) -> Result<DistanceMatrix, ClusterError> {
    if library.is_empty() {
        return Err(ClusterError::EmptyLibrary);
    }
    let txs = library.transactions();
    let labels = txs.iter().map(|t| t.index).collect();
    Ok(DistanceMatrix::from_fn(labels, exec, |i, j| {
        distance_unchecked(&txs[i].response, &txs[j].response, cfg)
    }))
}

/// Pairwise request distances over a library.
pub fn request_distance_matrix_with(
    library: &TransactionLibrary,
    cfg: &ScoringConfig,
    exec: Exec,
) -> Result<DistanceMatrix, ClusterError> {
    if library.is_empty() {
        return Err(ClusterError::EmptyLibrary);
    }
    let txs = library.transactions();
    let labels = txs.iter().map(|t| t.index).collect();
    Ok(DistanceMatrix::from_fn(labels, exec, |i, j| {
        distance_unchecked(&txs[i].request, &txs[j].request, cfg)
    }))
}

/// One agglomeration step. Leaves are nodes `0..n`; the node created by merge
/// `s` is `n + s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    /// Average-linkage distance between the two merged groups.
    pub distance: f64,
    pub size: usize,
}

struct Agglomeration {
    merges: Vec<Merge>,
    /// Leaf positions per surviving group, keyed by its smallest leaf.
    groups: Vec<Option<Vec<usize>>>,
}

fn agglomerate_until(matrix: &DistanceMatrix, target_groups: usize) -> Agglomeration {
    let n = matrix.len();
    let mut d = matrix.values.clone();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut node_of: Vec<usize> = (0..n).collect();
    let mut groups: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    let mut nn = vec![usize::MAX; n];
    let mut nn_d = vec![f64::INFINITY; n];

    // Nearest active neighbour above the diagonal; lowest column wins ties.
    let recompute = |i: usize, d: &[f64], active: &[bool], nn: &mut [usize], nn_d: &mut [f64]| {
        let mut best = f64::INFINITY;
        let mut arg = usize::MAX;
        for j in (i + 1)..n {
            if active[j] && d[i * n + j] < best {
                best = d[i * n + j];
                arg = j;
            }
        }
        nn[i] = arg;
        nn_d[i] = best;
    };
    for i in 0..n {
        recompute(i, &d, &active, &mut nn, &mut nn_d);
    }

    let mut merges = Vec::with_capacity(n.saturating_sub(target_groups));
    let mut remaining = n;
    while remaining > target_groups.max(1) {
        let mut a = usize::MAX;
        let mut best = f64::INFINITY;
        for i in 0..n {
            if active[i] && nn[i] != usize::MAX && (a == usize::MAX || nn_d[i] < best) {
                a = i;
                best = nn_d[i];
            }
        }
        let b = nn[a];
        let (sa, sb) = (size[a] as f64, size[b] as f64);
        merges.push(Merge {
            left: node_of[a],
            right: node_of[b],
            distance: best,
            size: size[a] + size[b],
        });

        for k in 0..n {
            if active[k] && k != a && k != b {
                let v = (sa * d[a * n + k] + sb * d[b * n + k]) / (sa + sb);
                d[a * n + k] = v;
                d[k * n + a] = v;
            }
        }
        size[a] += size[b];
        active[b] = false;
        node_of[a] = n + merges.len() - 1;
        let absorbed = groups[b].take().unwrap_or_default();
        if let Some(g) = groups[a].as_mut() {
            g.extend(absorbed);
        }
        remaining -= 1;

        recompute(a, &d, &active, &mut nn, &mut nn_d);
        for k in 0..a {
            if !active[k] {
                continue;
            }
            if nn[k] == a || nn[k] == b {
                recompute(k, &d, &active, &mut nn, &mut nn_d);
            } else {
                let v = d[k * n + a];
                if v < nn_d[k] || (v == nn_d[k] && a < nn[k]) {
                    nn[k] = a;
                    nn_d[k] = v;
                }
            }
        }
        for k in (a + 1)..b {
            if active[k] && nn[k] == b {
                recompute(k, &d, &active, &mut nn, &mut nn_d);
            }
        }
    }
    Agglomeration { merges, groups }
}

/// Full average-linkage dendrogram (UPGMA). Among equally close pairs the one
/// with the lexicographically smallest `(min leaf, max leaf)` key of the two
/// groups' smallest leaves merges first.
pub fn agglomerate(matrix: &DistanceMatrix) -> Vec<Merge> {
    agglomerate_until(matrix, 1).merges
}

/// Partition of matrix positions into `k` groups, each sorted, ordered by
/// smallest member.
pub fn partition(matrix: &DistanceMatrix, k: usize) -> Result<Vec<Vec<usize>>, ClusterError> {
    let n = matrix.len();
    if n == 0 {
        return Err(ClusterError::EmptyLibrary);
    }
    if k < 1 || k > n {
        return Err(ClusterError::BadK { k, n });
    }
    let mut groups: Vec<Vec<usize>> = agglomerate_until(matrix, k)
        .groups
        .into_iter()
        .flatten()
        .map(|mut g| {
            g.sort_unstable();
            g
        })
        .collect();
    groups.sort_by_key(|g| g[0]);
    Ok(groups)
}

/// Member minimising the summed distance to the other members. Ties go to
/// the smallest transaction index.
pub fn centroid(members: &[usize], matrix: &DistanceMatrix) -> usize {
    let mut best = members[0];
    let mut best_sum = f64::INFINITY;
    for &i in members {
        let sum: f64 = members.iter().map(|&j| matrix.get(i, j)).sum();
        let better = sum < best_sum
            || (sum == best_sum && matrix.labels[i] < matrix.labels[best]);
        if better {
            best = i;
            best_sum = sum;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    /// Transaction indices, in library order.
    pub members: Vec<u64>,
    pub centroid: u64,
    /// Library positions matching `members`.
    pub positions: Vec<usize>,
    pub centroid_position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Cluster position holding a transaction index.
    pub fn cluster_of(&self, index: u64) -> Option<usize> {
        self.clusters.iter().position(|c| c.members.contains(&index))
    }
}

/// Cuts the average-linkage dendrogram at `k` clusters and picks centroids.
pub fn cluster(matrix: &DistanceMatrix, k: usize) -> Result<ClusterSet, ClusterError> {
    let clusters = partition(matrix, k)?
        .into_iter()
        .map(|positions| {
            let c = centroid(&positions, matrix);
            Cluster {
                members: positions.iter().map(|&p| matrix.labels[p]).collect(),
                centroid: matrix.labels[c],
                positions,
                centroid_position: c,
            }
        })
        .collect();
    Ok(ClusterSet { clusters })
}
