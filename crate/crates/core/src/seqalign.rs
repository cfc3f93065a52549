//! Pairwise global alignment.
//!
//! Two flavours live here: plain Needleman-Wunsch over raw bytes, used offline
//! for clustering and guide trees, and the weighted wildcard variant used at
//! runtime to score a live request against a prototype.
//!
//! Aligned rows use `Option<u8>`, where `None` is a gap. Gaps therefore can
//! never collide with any of the 256 octet values.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protomodel::{ProtoSymbol, Prototype, Weights};

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("distance is undefined for an empty sequence")]
    EmptyInput,
    #[error("prototype has {prototype} symbols but {weights} weights")]
    LengthMismatch { prototype: usize, weights: usize },
    #[error("prototype is empty")]
    EmptyPrototype,
    #[error("invalid scoring configuration: {0}")]
    InvalidScoring(&'static str),
}

/// Needleman-Wunsch constants plus the wildcard score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub match_score: f64,
    pub mismatch: f64,
    pub gap: f64,
    pub wildcard: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            match_score: 1.0,
            mismatch: -1.0,
            gap: -1.0,
            wildcard: 0.0,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<(), AlignError> {
        let all = [self.match_score, self.mismatch, self.gap, self.wildcard];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(AlignError::InvalidScoring("scores must be finite"));
        }
        if self.match_score <= 0.0 {
            return Err(AlignError::InvalidScoring("match score must be positive"));
        }
        if self.mismatch >= self.match_score {
            return Err(AlignError::InvalidScoring(
                "mismatch penalty must be below the match score",
            ));
        }
        if self.gap > 0.0 {
            return Err(AlignError::InvalidScoring("gap penalty must not be positive"));
        }
        Ok(())
    }

    #[inline]
    fn pair(&self, a: u8, b: u8) -> f64 {
        if a == b {
            self.match_score
        } else {
            self.mismatch
        }
    }
}

/// A global alignment of two byte sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub aligned_a: Vec<Option<u8>>,
    pub aligned_b: Vec<Option<u8>>,
    pub score: f64,
}

impl Alignment {
    pub fn len(&self) -> usize {
        self.aligned_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aligned_a.is_empty()
    }
}

/// Drops gap symbols from an aligned row.
pub fn degap(row: &[Option<u8>]) -> Vec<u8> {
    row.iter().flatten().copied().collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Step {
    Diag,
    Up,
    Left,
}

/// Fills a full `(rows+1) x (cols+1)` score matrix and walks it back.
///
/// `diag(i, j)` scores row symbol `i` against column symbol `j`; `up(i)` is the
/// cost of consuming row symbol `i` against a gap and `left(j)` the cost of
/// consuming column symbol `j` against a gap. Traceback prefers the diagonal,
/// then up, then left.
pub(crate) fn align_generic<D, U, L>(rows: usize, cols: usize, diag: D, up: U, left: L) -> (Vec<Step>, f64)
where
    D: Fn(usize, usize) -> f64,
    U: Fn(usize) -> f64,
    L: Fn(usize) -> f64,
{
    let width = cols + 1;
    let mut h = vec![0.0f64; (rows + 1) * width];
    for j in 1..=cols {
        h[j] = h[j - 1] + left(j - 1);
    }
    for i in 1..=rows {
        let row = i * width;
        let prev = (i - 1) * width;
        h[row] = h[prev] + up(i - 1);
        let up_cost = up(i - 1);
        for j in 1..=cols {
            let d = h[prev + j - 1] + diag(i - 1, j - 1);
            let u = h[prev + j] + up_cost;
            let l = h[row + j - 1] + left(j - 1);
            h[row + j] = d.max(u).max(l);
        }
    }

    let score = h[rows * width + cols];
    let mut steps = Vec::with_capacity(rows + cols);
    let (mut i, mut j) = (rows, cols);
    while i > 0 || j > 0 {
        let here = h[i * width + j];
        if i > 0 && j > 0 && here == h[(i - 1) * width + j - 1] + diag(i - 1, j - 1) {
            steps.push(Step::Diag);
            i -= 1;
            j -= 1;
        } else if i > 0 && here == h[(i - 1) * width + j] + up(i - 1) {
            steps.push(Step::Up);
            i -= 1;
        } else {
            steps.push(Step::Left);
            j -= 1;
        }
    }
    steps.reverse();
    (steps, score)
}

/// Optimal global alignment of `a` against `b` in O(|a|·|b|) time.
pub fn global_align(a: &[u8], b: &[u8], cfg: &ScoringConfig) -> Alignment {
    let (steps, score) = align_generic(
        a.len(),
        b.len(),
        |i, j| cfg.pair(a[i], b[j]),
        |_| cfg.gap,
        |_| cfg.gap,
    );
    let mut aligned_a = Vec::with_capacity(steps.len());
    let mut aligned_b = Vec::with_capacity(steps.len());
    let (mut i, mut j) = (0, 0);
    for step in steps {
        match step {
            Step::Diag => {
                aligned_a.push(Some(a[i]));
                aligned_b.push(Some(b[j]));
                i += 1;
                j += 1;
            }
            Step::Up => {
                aligned_a.push(Some(a[i]));
                aligned_b.push(None);
                i += 1;
            }
            Step::Left => {
                aligned_a.push(None);
                aligned_b.push(Some(b[j]));
                j += 1;
            }
        }
    }
    Alignment {
        aligned_a,
        aligned_b,
        score,
    }
}

/// Optimal global alignment score only, in linear memory.
pub fn align_score(a: &[u8], b: &[u8], cfg: &ScoringConfig) -> f64 {
    // Iterate over the longer sequence so the row buffer is the shorter one.
    let (outer, inner) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let gap = cfg.gap;
    let mut row: Vec<f64> = (0..=inner.len()).map(|j| j as f64 * gap).collect();
    for (i, &x) in outer.iter().enumerate() {
        let mut diag = row[0];
        row[0] = (i + 1) as f64 * gap;
        for (j, &y) in inner.iter().enumerate() {
            let up = row[j + 1];
            let best = (diag + cfg.pair(x, y)).max(up + gap).max(row[j] + gap);
            diag = up;
            row[j + 1] = best;
        }
    }
    row[inner.len()]
}

/// Normalised Needleman-Wunsch distance in `[0, 1]`; 0 for identical inputs.
pub fn distance(a: &[u8], b: &[u8], cfg: &ScoringConfig) -> Result<f64, AlignError> {
    if a.is_empty() || b.is_empty() {
        return Err(AlignError::EmptyInput);
    }
    Ok(distance_unchecked(a, b, cfg))
}

pub(crate) fn distance_unchecked(a: &[u8], b: &[u8], cfg: &ScoringConfig) -> f64 {
    let best = cfg.match_score * a.len().max(b.len()) as f64;
    let d = 1.0 - align_score(a, b, cfg) / best;
    d.clamp(0.0, 1.0)
}

fn check_weights(prototype: &Prototype, weights: &Weights) -> Result<(), AlignError> {
    if prototype.len() != weights.len() {
        return Err(AlignError::LengthMismatch {
            prototype: prototype.len(),
            weights: weights.len(),
        });
    }
    Ok(())
}

#[inline]
fn weighted_pair(p: ProtoSymbol, w: f64, r: u8, cfg: &ScoringConfig) -> f64 {
    match p {
        ProtoSymbol::Wildcard => w * cfg.wildcard,
        ProtoSymbol::Byte(b) if b == r => w * cfg.match_score,
        ProtoSymbol::Byte(_) => w * cfg.mismatch,
    }
}

/// Score of prototype position `i` set against a gap. A wildcard scores
/// `w_i·x` whatever it faces.
#[inline]
fn weighted_deletion(p: ProtoSymbol, w: f64, cfg: &ScoringConfig) -> f64 {
    match p {
        ProtoSymbol::Wildcard => w * cfg.wildcard,
        ProtoSymbol::Byte(_) => w * cfg.gap,
    }
}

/// Best score aligning `request` to a weighted prototype.
///
/// Columns pairing prototype position `i` with a request byte score
/// `w_i·m`, `w_i·d` or `w_i·x`. A literal prototype position set against a
/// gap costs `w_i·g` and a wildcard one `w_i·x`; a request byte set against a
/// gap costs `mean(w)·g`.
pub fn weighted_score(
    prototype: &Prototype,
    weights: &Weights,
    request: &[u8],
    cfg: &ScoringConfig,
) -> Result<f64, AlignError> {
    check_weights(prototype, weights)?;
    let symbols = prototype.symbols();
    let w = weights.values();
    let insert_cost = weights.mean() * cfg.gap;

    let mut row: Vec<f64> = (0..=request.len()).map(|j| j as f64 * insert_cost).collect();
    for (i, &p) in symbols.iter().enumerate() {
        let delete_cost = weighted_deletion(p, w[i], cfg);
        let mut diag = row[0];
        row[0] += delete_cost;
        for (j, &r) in request.iter().enumerate() {
            let up = row[j + 1];
            let best = (diag + weighted_pair(p, w[i], r, cfg))
                .max(up + delete_cost)
                .max(row[j] + insert_cost);
            diag = up;
            row[j + 1] = best;
        }
    }
    Ok(row[request.len()])
}

/// A weighted prototype/request alignment, mostly useful for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedAlignment {
    pub prototype: Vec<Option<ProtoSymbol>>,
    pub request: Vec<Option<u8>>,
    pub score: f64,
}

/// Same scoring as [`weighted_score`] but also returns the alignment.
pub fn weighted_align(
    prototype: &Prototype,
    weights: &Weights,
    request: &[u8],
    cfg: &ScoringConfig,
) -> Result<WeightedAlignment, AlignError> {
    check_weights(prototype, weights)?;
    let symbols = prototype.symbols();
    let w = weights.values();
    let insert_cost = weights.mean() * cfg.gap;
    let (steps, score) = align_generic(
        symbols.len(),
        request.len(),
        |i, j| weighted_pair(symbols[i], w[i], request[j], cfg),
        |i| weighted_deletion(symbols[i], w[i], cfg),
        |_| insert_cost,
    );
    let mut out_p = Vec::with_capacity(steps.len());
    let mut out_r = Vec::with_capacity(steps.len());
    let (mut i, mut j) = (0, 0);
    for step in steps {
        match step {
            Step::Diag => {
                out_p.push(Some(symbols[i]));
                out_r.push(Some(request[j]));
                i += 1;
                j += 1;
            }
            Step::Up => {
                out_p.push(Some(symbols[i]));
                out_r.push(None);
                i += 1;
            }
            Step::Left => {
                out_p.push(None);
                out_r.push(Some(request[j]));
                j += 1;
            }
        }
    }
    Ok(WeightedAlignment {
        prototype: out_p,
        request: out_r,
        score,
    })
}

/// Highest and lowest attainable prototype scores, `(s_max, s_min)`.
pub fn score_bounds(prototype: &Prototype, weights: &Weights, cfg: &ScoringConfig) -> (f64, f64) {
    let mut hi = 0.0;
    let mut lo = 0.0;
    for (&p, &w) in prototype.symbols().iter().zip(weights.values()) {
        match p {
            ProtoSymbol::Wildcard => {
                hi += w * cfg.wildcard;
                lo += w * cfg.wildcard;
            }
            ProtoSymbol::Byte(_) => {
                hi += w * cfg.match_score;
                lo += w * cfg.mismatch;
            }
        }
    }
    (hi, lo)
}

/// Relative match distance of a request to a prototype.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeDistance {
    /// In `[0, 1]`; 0 is the best possible match.
    pub value: f64,
    /// Set when the prototype has no score range (every symbol a wildcard);
    /// `value` is then 1.
    pub degenerate: bool,
}

pub fn relative_distance(
    prototype: &Prototype,
    weights: &Weights,
    request: &[u8],
    cfg: &ScoringConfig,
) -> Result<RelativeDistance, AlignError> {
    if prototype.is_empty() {
        return Err(AlignError::EmptyPrototype);
    }
    check_weights(prototype, weights)?;
    let (s_max, s_min) = score_bounds(prototype, weights, cfg);
    let range = s_max - s_min;
    if !(range > 0.0) {
        return Ok(RelativeDistance {
            value: 1.0,
            degenerate: true,
        });
    }
    let s = weighted_score(prototype, weights, request, cfg)?;
    let value = (1.0 - (s - s_min) / range).clamp(0.0, 1.0);
    Ok(RelativeDistance {
        value,
        degenerate: false,
    })
}
