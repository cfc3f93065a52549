//! Progressive multiple sequence alignment.
//!
//! Sequences are merged pairwise following a UPGMA guide tree built from
//! normalised Needleman-Wunsch distances. Each merge aligns two profiles with
//! the same dynamic programme as pairwise alignment, scoring a column pair by
//! its sum-of-pairs expectation. Gaps, once inserted, are never removed.

use crate::clusterer::{agglomerate, DistanceMatrix};
use crate::par::Exec;
use crate::seqalign::{align_generic, distance_unchecked, ScoringConfig, Step};

/// UPGMA guide tree. Leaves are `0..n` (positions of the input sequences);
/// internal node `n + s` is created by the `s`-th join.
#[derive(Debug, Clone, PartialEq)]
pub struct GuideTree {
    labels: Vec<u64>,
    joins: Vec<Join>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Join {
    pub left: usize,
    pub right: usize,
    /// Half the average-linkage distance between the two subtrees.
    pub height: f64,
}

impl GuideTree {
    pub fn leaf_count(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[u64] {
        &self.labels
    }

    /// Joins in the order they are applied (non-decreasing height).
    pub fn joins(&self) -> &[Join] {
        &self.joins
    }

    pub fn root(&self) -> usize {
        if self.joins.is_empty() {
            0
        } else {
            self.labels.len() + self.joins.len() - 1
        }
    }

    /// Leaf positions below a node.
    pub fn leaves_under(&self, node: usize) -> Vec<usize> {
        let n = self.labels.len();
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < n {
                out.push(x);
            } else {
                let j = self.joins[x - n];
                stack.push(j.right);
                stack.push(j.left);
            }
        }
        out
    }

    pub fn height(&self, node: usize) -> f64 {
        let n = self.labels.len();
        if node < n {
            0.0
        } else {
            self.joins[node - n].height
        }
    }
}

/// Guide tree over an already computed distance matrix.
pub fn guide_tree_from_matrix(matrix: &DistanceMatrix) -> GuideTree {
    let joins = agglomerate(matrix)
        .into_iter()
        .map(|m| Join {
            left: m.left,
            right: m.right,
            height: m.distance / 2.0,
        })
        .collect();
    GuideTree {
        labels: matrix.labels().to_vec(),
        joins,
    }
}

pub fn build_guide_tree(sequences: &[Vec<u8>], cfg: &ScoringConfig) -> GuideTree {
    let labels = (0..sequences.len() as u64).collect();
    guide_tree_from_matrix(&pairwise_matrix(labels, sequences, cfg, Exec::default()))
}

pub(crate) fn pairwise_matrix(
    labels: Vec<u64>,
    sequences: &[Vec<u8>],
    cfg: &ScoringConfig,
    exec: Exec,
) -> DistanceMatrix {
    DistanceMatrix::from_fn(labels, exec, |i, j| {
        if sequences[i].is_empty() || sequences[j].is_empty() {
            if sequences[i].is_empty() && sequences[j].is_empty() {
                0.0
            } else {
                1.0
            }
        } else {
            distance_unchecked(&sequences[i], &sequences[j], cfg)
        }
    })
}

/// Gap-padded rows of equal length, one per aligned sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentProfile {
    rows: Vec<Vec<Option<u8>>>,
    ids: Vec<u64>,
}

impl AlignmentProfile {
    pub fn single(id: u64, sequence: &[u8]) -> Self {
        Self {
            rows: vec![sequence.iter().copied().map(Some).collect()],
            ids: vec![id],
        }
    }

    /// Builds a profile from explicit rows, checking that they share a length
    /// and that no column is entirely gaps.
    pub fn from_rows(ids: Vec<u64>, rows: Vec<Vec<Option<u8>>>) -> Option<Self> {
        if ids.len() != rows.len() || rows.is_empty() {
            return None;
        }
        let width = rows[0].len();
        if rows.iter().any(|r| r.len() != width) {
            return None;
        }
        let p = Self { rows, ids };
        if (0..width).any(|c| p.rows.iter().all(|r| r[c].is_none())) {
            return None;
        }
        Some(p)
    }

    pub fn rows(&self) -> &[Vec<Option<u8>>] {
        &self.rows
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = Option<u8>> + '_ {
        self.rows.iter().map(move |r| r[c])
    }

    /// Renders rows with `-` for gaps. Bytes outside printable ASCII show as `.`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for row in &self.rows {
            for sym in row {
                s.push(match sym {
                    None => '-',
                    Some(b) if b.is_ascii_graphic() || *b == b' ' => *b as char,
                    Some(_) => '.',
                });
            }
            s.push('\n');
        }
        s
    }

    fn summaries(&self) -> Vec<ColumnSummary> {
        (0..self.width())
            .map(|c| ColumnSummary::of(self.column(c), self.rows.len()))
            .collect()
    }
}

/// Sparse symbol counts of one profile column.
struct ColumnSummary {
    bytes: Vec<(u8, u32)>,
    gaps: u32,
    rows: u32,
}

impl ColumnSummary {
    fn of(column: impl Iterator<Item = Option<u8>>, rows: usize) -> Self {
        let mut counts = [0u32; 256];
        let mut gaps = 0;
        for sym in column {
            match sym {
                Some(b) => counts[b as usize] += 1,
                None => gaps += 1,
            }
        }
        let bytes = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(b, &c)| (b as u8, c))
            .collect();
        Self {
            bytes,
            gaps,
            rows: rows as u32,
        }
    }

    fn byte_rows(&self) -> u32 {
        self.rows - self.gaps
    }
}

/// Mean pairwise score between the symbols of two columns; gap/gap pairs
/// score zero.
fn column_pair_score(u: &ColumnSummary, v: &ColumnSummary, cfg: &ScoringConfig) -> f64 {
    let mut same = 0u64;
    let (mut i, mut j) = (0, 0);
    while i < u.bytes.len() && j < v.bytes.len() {
        let (bu, cu) = u.bytes[i];
        let (bv, cv) = v.bytes[j];
        match bu.cmp(&bv) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                same += cu as u64 * cv as u64;
                i += 1;
                j += 1;
            }
        }
    }
    let (bu, bv) = (u.byte_rows() as f64, v.byte_rows() as f64);
    let same = same as f64;
    let total = cfg.match_score * same
        + cfg.mismatch * (bu * bv - same)
        + cfg.gap * (u.gaps as f64 * bv + bu * v.gaps as f64);
    total / (u.rows as f64 * v.rows as f64)
}

/// Mean score of a column against an inserted all-gap column.
fn column_gap_score(u: &ColumnSummary, cfg: &ScoringConfig) -> f64 {
    cfg.gap * u.byte_rows() as f64 / u.rows as f64
}

/// Aligns two profiles. Rows of `p` come first, then rows of `q`.
pub fn align_profiles(p: &AlignmentProfile, q: &AlignmentProfile, cfg: &ScoringConfig) -> AlignmentProfile {
    align_profiles_scored(p, q, cfg).0
}

pub(crate) fn align_profiles_scored(
    p: &AlignmentProfile,
    q: &AlignmentProfile,
    cfg: &ScoringConfig,
) -> (AlignmentProfile, f64) {
    let ps = p.summaries();
    let qs = q.summaries();
    let (steps, score) = align_generic(
        ps.len(),
        qs.len(),
        |i, j| column_pair_score(&ps[i], &qs[j], cfg),
        |i| column_gap_score(&ps[i], cfg),
        |j| column_gap_score(&qs[j], cfg),
    );

    let mut rows: Vec<Vec<Option<u8>>> = (0..p.rows.len() + q.rows.len())
        .map(|_| Vec::with_capacity(steps.len()))
        .collect();
    let (mut i, mut j) = (0, 0);
    for step in steps {
        let (take_p, take_q) = match step {
            Step::Diag => (true, true),
            Step::Up => (true, false),
            Step::Left => (false, true),
        };
        for (r, row) in p.rows.iter().enumerate() {
            rows[r].push(if take_p { row[i] } else { None });
        }
        for (r, row) in q.rows.iter().enumerate() {
            rows[p.rows.len() + r].push(if take_q { row[j] } else { None });
        }
        i += take_p as usize;
        j += take_q as usize;
    }
    let mut ids = p.ids.clone();
    ids.extend_from_slice(&q.ids);
    (AlignmentProfile { rows, ids }, score)
}

/// Aligns all sequences; rows come back in input order with ids `0..n`.
pub fn progressive_align(sequences: &[Vec<u8>], cfg: &ScoringConfig) -> AlignmentProfile {
    let ids: Vec<u64> = (0..sequences.len() as u64).collect();
    let tree = guide_tree_from_matrix(&pairwise_matrix(ids, sequences, cfg, Exec::default()));
    align_with_tree(&tree, sequences, cfg)
}

/// Progressive alignment along a prebuilt guide tree. `sequences[i]` is leaf
/// `i`; row ids are taken from the tree labels. Rows come back in leaf order.
pub fn align_with_tree(tree: &GuideTree, sequences: &[Vec<u8>], cfg: &ScoringConfig) -> AlignmentProfile {
    let n = tree.leaf_count();
    assert_eq!(n, sequences.len(), "guide tree and sequence count differ");
    assert!(n > 0, "nothing to align");
    let mut nodes: Vec<Option<AlignmentProfile>> = tree
        .labels()
        .iter()
        .zip(sequences)
        .map(|(&id, s)| Some(AlignmentProfile::single(id, s)))
        .collect();
    for join in tree.joins() {
        let left = nodes[join.left].take().expect("guide tree reuses a node");
        let right = nodes[join.right].take().expect("guide tree reuses a node");
        nodes.push(Some(align_profiles(&left, &right, cfg)));
    }
    let mut profile = nodes[tree.root()].take().expect("root profile");

    let order: std::collections::HashMap<u64, usize> =
        tree.labels().iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut paired: Vec<(usize, u64, Vec<Option<u8>>)> = profile
        .ids
        .drain(..)
        .zip(profile.rows.drain(..))
        .map(|(id, row)| (order[&id], id, row))
        .collect();
    paired.sort_by_key(|(pos, _, _)| *pos);
    let (ids, rows) = paired.into_iter().map(|(_, id, row)| (id, row)).unzip();
    AlignmentProfile { rows, ids }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqalign::{degap, global_align};

    fn seqs(xs: &[&str]) -> Vec<Vec<u8>> {
        xs.iter().map(|s| s.as_bytes().to_vec()).collect()
    }

    #[test]
    fn single_leaf_tree() {
        let t = build_guide_tree(&seqs(&["abc"]), &ScoringConfig::default());
        assert_eq!(t.leaf_count(), 1);
        assert!(t.joins().is_empty());
        assert_eq!(t.root(), 0);
    }

    #[test]
    fn two_leaf_tree_height_is_half_distance() {
        let s = seqs(&["abcd", "abxd"]);
        let t = build_guide_tree(&s, &ScoringConfig::default());
        let d = distance_unchecked(&s[0], &s[1], &ScoringConfig::default());
        assert_eq!(t.joins().len(), 1);
        assert_eq!(t.height(t.root()), d / 2.0);
    }

    #[test]
    fn identical_single_rows_gain_no_gaps() {
        let c = ScoringConfig::default();
        let p = align_profiles(&AlignmentProfile::single(0, b"AB"), &AlignmentProfile::single(1, b"AB"), &c);
        assert_eq!(p.width(), 2);
        assert!(p.rows().iter().all(|r| r.iter().all(Option::is_some)));
    }

    #[test]
    fn short_row_gains_one_gap() {
        let c = ScoringConfig::default();
        let p = align_profiles(&AlignmentProfile::single(0, b"ABC"), &AlignmentProfile::single(1, b"AC"), &c);
        assert_eq!(p.rows()[1], vec![Some(b'A'), None, Some(b'C')]);
        assert_eq!(p.rows()[0], vec![Some(b'A'), Some(b'B'), Some(b'C')]);
    }

    #[test]
    fn two_row_merge_reduces_to_pairwise() {
        let c = ScoringConfig::default();
        for (a, b) in [("kitten", "sitting"), ("{id:1,op:S}", "{id:2273,op:A,x}"), ("a", "bbbb")] {
            let (p, score) = align_profiles_scored(
                &AlignmentProfile::single(0, a.as_bytes()),
                &AlignmentProfile::single(1, b.as_bytes()),
                &c,
            );
            let g = global_align(a.as_bytes(), b.as_bytes(), &c);
            assert_eq!(score, g.score);
            assert_eq!(p.rows()[0], g.aligned_a);
            assert_eq!(p.rows()[1], g.aligned_b);
        }
    }

    #[test]
    fn copies_stay_gap_free() {
        let s = seqs(&["{id:1,op:S}"; 5]);
        let p = progressive_align(&s, &ScoringConfig::default());
        assert_eq!(p.row_count(), 5);
        for row in p.rows() {
            assert_eq!(degap(row), s[0]);
            assert_eq!(row.len(), s[0].len());
        }
    }

    #[test]
    fn rows_return_in_input_order() {
        let s = seqs(&["zzzz", "abc", "abd", "zzzy"]);
        let p = progressive_align(&s, &ScoringConfig::default());
        assert_eq!(p.ids(), &[0, 1, 2, 3]);
        for (row, orig) in p.rows().iter().zip(&s) {
            assert_eq!(&degap(row), orig);
        }
    }

    #[test]
    fn from_rows_rejects_all_gap_column() {
        assert!(AlignmentProfile::from_rows(vec![0, 1], vec![vec![Some(1), None], vec![Some(2), None]]).is_none());
        assert!(AlignmentProfile::from_rows(vec![0], vec![vec![Some(1)]]).is_some());
    }
}
