use osv_core::clusterer::{agglomerate, centroid, partition, DistanceMatrix};
use osv_core::emulator::{find_symmetric_fields, transform_response};
use osv_core::harness::fold_assignment;
use osv_core::msa::progressive_align;
use osv_core::protomodel::{
    column_entropy, consensus_prototype, occurrence_table, ColumnCounts, ProtoSymbol, Prototype, Weights,
};
use osv_core::seqalign::{degap, distance, global_align, relative_distance, score_bounds, weighted_score, ScoringConfig};
use osv_core::trace::{read_library, write_library, Transaction, TransactionLibrary};
use proptest::prelude::*;

fn cfg() -> ScoringConfig {
    ScoringConfig::default()
}

fn small_bytes(max: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(prop::sample::select(b"abcd{}:,".to_vec()), 1..=max)
}

fn prototype_and_weights() -> impl Strategy<Value = (Prototype, Weights)> {
    prop::collection::vec((prop::option::weighted(0.7, prop::sample::select(b"abcd".to_vec())), 0.01f64..1.0), 1..12)
        .prop_map(|cols| {
            let symbols = cols
                .iter()
                .map(|(s, _)| s.map_or(ProtoSymbol::Wildcard, ProtoSymbol::Byte))
                .collect();
            let weights = Weights::new(cols.iter().map(|(_, w)| *w).collect()).unwrap();
            (Prototype::new(symbols), weights)
        })
}

fn symmetric_matrix(max_n: usize) -> impl Strategy<Value = DistanceMatrix> {
    (2..=max_n).prop_flat_map(|n| {
        prop::collection::vec(0.0f64..1.0, n * (n - 1) / 2).prop_map(move |upper| {
            let mut values = vec![0.0; n * n];
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    values[i * n + j] = upper[k];
                    values[j * n + i] = upper[k];
                    k += 1;
                }
            }
            DistanceMatrix::new((0..n as u64).map(|i| i * 10).collect(), values).unwrap()
        })
    })
}

/// Average linkage by brute force: linkage recomputed from the raw matrix
/// every round.
fn naive_average_linkage(m: &DistanceMatrix, k: usize) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = (0..m.len()).map(|i| vec![i]).collect();
    while groups.len() > k {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..groups.len() {
            for b in a + 1..groups.len() {
                let mut sum = 0.0;
                for &i in &groups[a] {
                    for &j in &groups[b] {
                        sum += m.get(i, j);
                    }
                }
                let avg = sum / (groups[a].len() * groups[b].len()) as f64;
                if avg < best.0 {
                    best = (avg, a, b);
                }
            }
        }
        let merged = groups.remove(best.2);
        groups[best.1].extend(merged);
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    groups.sort();
    groups
}

/// Sum-of-pairs score of a two-row profile, gap against gap scoring 0.
fn two_row_score(rows: &[Vec<Option<u8>>], c: &ScoringConfig) -> f64 {
    rows[0]
        .iter()
        .zip(&rows[1])
        .map(|pair| match pair {
            (Some(x), Some(y)) if x == y => c.match_score,
            (Some(_), Some(_)) => c.mismatch,
            (None, None) => 0.0,
            _ => c.gap,
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn trace_round_trip(records in prop::collection::vec(
        (prop::collection::vec(any::<u8>(), 1..40), prop::collection::vec(any::<u8>(), 1..40)), 0..20)
    ) {
        let lib = TransactionLibrary::new(
            records.into_iter().enumerate().map(|(i, (q, r))| Transaction::new(i as u64 * 3, q, r)).collect(),
        ).unwrap();
        let mut bytes = Vec::new();
        write_library(&lib, &mut bytes).unwrap();
        let back = read_library(bytes.as_slice()).unwrap();
        prop_assert_eq!(&back, &lib);
        prop_assert_eq!(read_library(bytes.as_slice()).unwrap(), back);
    }

    #[test]
    fn alignment_degaps_to_inputs(a in prop::collection::vec(any::<u8>(), 0..30), b in prop::collection::vec(any::<u8>(), 0..30)) {
        let aln = global_align(&a, &b, &cfg());
        prop_assert_eq!(degap(&aln.aligned_a), a);
        prop_assert_eq!(degap(&aln.aligned_b), b);
        prop_assert_eq!(aln.aligned_a.len(), aln.aligned_b.len());
        prop_assert!(aln.aligned_a.iter().zip(&aln.aligned_b).all(|(x, y)| x.is_some() || y.is_some()));
    }

    #[test]
    fn distance_is_symmetric_bounded_and_zero_on_self(a in small_bytes(25), b in small_bytes(25)) {
        let d = distance(&a, &b, &cfg()).unwrap();
        prop_assert_eq!(d, distance(&b, &a, &cfg()).unwrap());
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(distance(&a, &a, &cfg()).unwrap(), 0.0);
    }

    #[test]
    fn relative_distance_range_and_endpoints((p, w) in prototype_and_weights(), r in small_bytes(16)) {
        let d = relative_distance(&p, &w, &r, &cfg()).unwrap();
        prop_assert!((0.0..=1.0).contains(&d.value));
        if d.degenerate {
            prop_assert!(p.is_all_wildcards());
            prop_assert_eq!(d.value, 1.0);
        } else {
            let (s_max, s_min) = score_bounds(&p, &w, &cfg());
            let s = weighted_score(&p, &w, &r, &cfg()).unwrap();
            prop_assert_eq!(d.value == 0.0, s >= s_max - 1e-12 * s_max.abs().max(1.0));
            prop_assert_eq!(d.value == 1.0, s <= s_min);
        }
    }

    #[test]
    fn relative_distance_ignores_weight_scale((p, w) in prototype_and_weights(), r in small_bytes(16), k in 0.001f64..1000.0) {
        let a = relative_distance(&p, &w, &r, &cfg()).unwrap().value;
        let b = relative_distance(&p, &w.scaled(k).unwrap(), &r, &cfg()).unwrap().value;
        prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn partition_covers_every_position_once(m in symmetric_matrix(14), k_seed in any::<usize>()) {
        let n = m.len();
        let k = 1 + k_seed % n;
        let groups = partition(&m, k).unwrap();
        prop_assert_eq!(groups.len(), k);
        let mut all: Vec<usize> = groups.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(partition(&m, k).unwrap(), groups);
    }

    #[test]
    fn partition_matches_brute_force_linkage(m in symmetric_matrix(10)) {
        for k in 1..=m.len() {
            let mut got = partition(&m, k).unwrap();
            got.sort();
            prop_assert_eq!(got, naive_average_linkage(&m, k), "k = {}", k);
        }
    }

    #[test]
    fn centroid_minimises_total_distance(m in symmetric_matrix(12)) {
        let members: Vec<usize> = (0..m.len()).collect();
        let c = centroid(&members, &m);
        let total = |i: usize| members.iter().map(|&j| m.get(i, j)).sum::<f64>();
        prop_assert!(members.iter().all(|&i| total(c) <= total(i)));
    }

    #[test]
    fn progressive_alignment_invariants(seqs in prop::collection::vec(small_bytes(12), 1..7)) {
        let profile = progressive_align(&seqs, &cfg());
        prop_assert_eq!(profile.row_count(), seqs.len());
        for (row, s) in profile.rows().iter().zip(&seqs) {
            prop_assert_eq!(&degap(row), s);
        }
        let width = profile.width();
        prop_assert!(width >= seqs.iter().map(Vec::len).max().unwrap());
        prop_assert!(width <= seqs.iter().map(Vec::len).sum::<usize>());
        prop_assert!((0..width).all(|c| profile.column(c).any(|s| s.is_some())));
    }

    #[test]
    fn two_sequence_alignment_reduces_to_pairwise(a in small_bytes(15), b in small_bytes(15)) {
        let profile = progressive_align(&[a.clone(), b.clone()], &cfg());
        prop_assert_eq!(two_row_score(profile.rows(), &cfg()), global_align(&a, &b, &cfg()).score);
    }

    #[test]
    fn prototype_symbols_come_from_their_columns(seqs in prop::collection::vec(small_bytes(10), 1..8), f in 0.51f64..=1.0) {
        let profile = progressive_align(&seqs, &cfg());
        let table = occurrence_table(&profile);
        let consensus = consensus_prototype(&table, f);
        prop_assert!(consensus.prototype.len() <= profile.width());
        let mostly_bytes = table.columns.iter().filter(|c| 2 * c.gaps < table.rows).count();
        prop_assert!(consensus.prototype.len() >= mostly_bytes);
        for (sym, &col) in consensus.prototype.symbols().iter().zip(&consensus.columns) {
            if let ProtoSymbol::Byte(b) = sym {
                prop_assert!(profile.column(col).any(|s| s == Some(*b)));
            }
        }
    }

    #[test]
    fn lower_entropy_never_weighs_less(a in prop::collection::vec(0u32..5, 5), b in prop::collection::vec(0u32..5, 5)) {
        // Pad both columns with gaps to a common row count.
        let rows = a.iter().sum::<u32>().max(b.iter().sum::<u32>()).max(1);
        let col = |v: &[u32]| ColumnCounts {
            bytes: v.iter().enumerate().filter(|(_, &n)| n > 0).map(|(i, &n)| (b'a' + i as u8, n)).collect(),
            gaps: rows - v.iter().sum::<u32>(),
        };
        let (ca, cb) = (col(&a), col(&b));
        let (ha, hb) = (column_entropy(&ca, rows), column_entropy(&cb, rows));
        let (wa, wb) = (1.0 / (1.0 + ha), 1.0 / (1.0 + hb));
        // Equal count multisets can differ in the last bit through summation
        // order.
        const EPS: f64 = 1e-12;
        if ha + EPS < hb {
            prop_assert!(wa > wb);
        } else if hb + EPS < ha {
            prop_assert!(wb > wa);
        } else {
            prop_assert!((wa - wb).abs() < EPS);
        }
    }

    #[test]
    fn symmetric_fields_are_sound(req in small_bytes(30), resp in small_bytes(30), min_len in 1usize..6) {
        let fields = find_symmetric_fields(&req, &resp, min_len);
        for f in &fields {
            prop_assert!(f.len >= min_len);
            prop_assert!(f.is_valid_for(&req, &resp));
        }
        for w in fields.windows(2) {
            prop_assert!(w[0].response_range().end <= w[1].response_offset);
        }
    }

    #[test]
    fn substitution_keeps_bytes_outside_fields(req in small_bytes(24), resp in small_bytes(24), live in small_bytes(24)) {
        let fields = find_symmetric_fields(&req, &resp, 3);
        let out = transform_response(&req, &resp, &fields, &live, &cfg());
        prop_assert_eq!(&out, &transform_response(&req, &resp, &fields, &live, &cfg()));
        // The recorded segments between fields appear in order, anchored at
        // both ends.
        let mut segments = Vec::new();
        let mut cursor = 0;
        for f in &fields {
            segments.push(&resp[cursor..f.response_offset]);
            cursor = f.response_offset + f.len;
        }
        segments.push(&resp[cursor..]);
        prop_assert!(out.starts_with(segments[0]));
        prop_assert!(out.ends_with(segments[segments.len() - 1]));
        let mut pos = segments[0].len();
        for seg in segments.iter().skip(1).take(segments.len().saturating_sub(2)) {
            let found = out[pos..].windows(seg.len().max(1)).position(|w| seg.is_empty() || w == *seg);
            prop_assert!(found.is_some());
            pos += found.unwrap() + seg.len();
        }
    }

    #[test]
    fn folds_are_disjoint_and_exhaustive(n in 2usize..300, folds_seed in any::<usize>(), seed in any::<u64>(), repeat in 0usize..10) {
        let folds = 2 + folds_seed % (n - 1).min(15);
        let parts = fold_assignment(n, folds, seed, repeat);
        let mut all = parts.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(fold_assignment(n, folds, seed, repeat), parts);
    }
}

#[test]
fn ultrametric_fixture_merges_in_order() {
    // Two tight pairs joined at 0.6, then a far outlier at 0.9.
    let d = [
        [0.0, 0.1, 0.6, 0.6, 0.9],
        [0.1, 0.0, 0.6, 0.6, 0.9],
        [0.6, 0.6, 0.0, 0.2, 0.9],
        [0.6, 0.6, 0.2, 0.0, 0.9],
        [0.9, 0.9, 0.9, 0.9, 0.0],
    ];
    let m = DistanceMatrix::new((0..5).collect(), d.concat()).unwrap();
    let merges = agglomerate(&m);
    let heights: Vec<f64> = merges.iter().map(|x| x.distance).collect();
    assert_eq!(heights, vec![0.1, 0.2, 0.6, 0.9]);
    assert!(heights.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(merges.last().unwrap().size, 5);
}
