mod common;

use common::{index_mask, union_mask};
use ndarray::Array2;
use proptest::prelude::*;
use vsring_core::attention::{attention_weights, AttnInputs, Mask};
use vsring_core::pattern::*;
use vsring_core::sparse::recall;
use vsring_core::synth::{random_inputs, rope_structured_inputs};

/// Smallest subset size whose sum reaches `p · total`, by enumerating all
/// subsets.
fn exhaustive_budget(scores: &[f64], p: f64) -> usize {
    let n = scores.len();
    let total: f64 = scores.iter().sum();
    (1u32..1 << n)
        .filter(|mask| {
            let sum: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| scores[i]).sum();
            sum >= p * total
        })
        .map(|mask| mask.count_ones() as usize)
        .min()
        .unwrap()
}

fn sink_column_inputs(col: usize) -> AttnInputs {
    // every query shares one direction, only key `col` is aligned with it
    let (s, d) = (128, 8);
    let q = Array2::from_shape_fn((s, d), |(_, c)| if c == 0 { 4.0 } else { 0.0 });
    let k = Array2::from_shape_fn((s, d), |(m, c)| if c == 0 && m == col { 4.0 } else { 0.01 * ((m * 7 + c) % 5) as f64 });
    let v = Array2::from_shape_fn((s, d), |(m, c)| ((m + c) % 3) as f64);
    AttnInputs::contiguous(q, k, v, true).unwrap()
}

#[test]
fn strong_column_is_selected() {
    let idx = estimate_pattern(&sink_column_inputs(7), &PatternConfig { last_q: 16, block: 16, b_s: 16, ..Default::default() }).unwrap();
    assert!(idx.verticals().contains(&7));
    assert!(idx.verticals().contains(&0));
    assert!(idx.slashes().contains(&0));
}

#[test]
fn local_attention_selects_diagonal() {
    // scores fall off with distance, so mass sits on the main diagonal
    let (s, d) = (128, 2);
    let q = Array2::from_shape_fn((s, d), |(n, c)| if c == 0 { (n as f64 * 0.05).cos() * 40.0 } else { (n as f64 * 0.05).sin() * 40.0 });
    let inp = AttnInputs::contiguous(q.clone(), q, Array2::ones((s, d)), true).unwrap();
    let idx = estimate_pattern(&inp, &PatternConfig { last_q: 16, block: 16, b_s: 16, p_v: 0.5, p_s: 0.5 }).unwrap();
    assert_eq!(idx.slashes(), &[0]);
}

#[test]
fn full_budget_recovers_all_mass() {
    for seed in 0..3 {
        let inp = random_inputs(256, 16, seed).unwrap();
        let cfg = PatternConfig { p_v: 1.0, p_s: 1.0, last_q: 32, block: 32, b_s: 64 };
        let idx = estimate_pattern(&inp, &cfg).unwrap();
        assert_eq!(idx.density(), 1.0);
        assert_eq!(recall(&inp, &idx).unwrap(), 1.0);
    }
}

#[test]
fn window_longer_than_sequence() {
    let inp = random_inputs(32, 4, 0).unwrap();
    assert_eq!(
        estimate_pattern(&inp, &PatternConfig::default()),
        Err(vsring_core::Error::Window { last_q: 64, seq_len: 32 })
    );
}

#[test]
fn estimated_pattern_recall_on_rope_inputs() {
    let recalls: Vec<f64> = (0..50)
        .map(|seed| {
            let inp = rope_structured_inputs(1024, 32, 10_000.0, seed).unwrap();
            let idx = estimate_pattern(&inp, &PatternConfig::default()).unwrap();
            assert!(idx.density() < 1.0);
            recall(&inp, &idx).unwrap()
        })
        .collect();
    let mean = recalls.iter().sum::<f64>() / recalls.len() as f64;
    assert!(mean >= 0.85, "mean recall {mean}");
}

#[test]
fn antidiag_scores_match_weight_sums() {
    let inp = random_inputs(64, 8, 4).unwrap();
    let (block, stride) = (16, 4);
    let a = attention_weights(&inp, &Mask::Causal).unwrap();
    let got = antidiag_scores(&inp, block, stride);
    for qb in 0..4 {
        for kb in 0..=qb {
            let mut want = 0.0;
            for i in 0..block {
                for j in 0..block {
                    if (i + j) % stride == stride - 1 {
                        want += a[[qb * block + i, kb * block + j]];
                    }
                }
            }
            assert!((got[qb][kb] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn antidiag_full_threshold_is_full_causal() {
    let inp = random_inputs(128, 8, 1).unwrap();
    let idx = antidiag_block_index(&inp, 32, 8, 1.0).unwrap();
    assert_eq!(idx.block_pairs(), SparseIndex::full_causal(128, 32).unwrap().block_pairs());
    assert_eq!(idx.density(), 1.0);
}

#[test]
fn antidiag_keeps_diagonal_and_is_deterministic() {
    let inp = rope_structured_inputs(256, 16, 10_000.0, 2).unwrap();
    let a = antidiag_block_index(&inp, 32, 8, 0.5).unwrap();
    let b = antidiag_block_index(&inp, 32, 8, 0.5).unwrap();
    assert_eq!(a, b);
    for qb in 0..8 {
        assert!(a.has_block(qb, qb));
    }
    assert!(antidiag_block_index(&inp, 48, 8, 0.5).is_err());
    assert!(antidiag_block_index(&inp, 32, 0, 0.5).is_err());
}

#[test]
fn antidiag_block_diagonal_attention() {
    // keys of other blocks are orthogonal and far weaker
    let (s, d, b) = (64, 4, 16);
    let q = Array2::from_shape_fn((s, d), |(n, c)| if c == n / b { 30.0 } else { 0.0 });
    let inp = AttnInputs::contiguous(q.clone(), q, Array2::ones((s, d)), true).unwrap();
    let idx = antidiag_block_index(&inp, b, 4, 0.9).unwrap();
    assert_eq!(idx.block_pairs(), &[(0, 0), (1, 1), (2, 2), (3, 3)]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn topp_is_minimal(scores in proptest::collection::vec(0u8..20, 1..10), p in 1u8..=20) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        prop_assume!(scores.iter().sum::<f64>() > 0.0);
        let p = f64::from(p) / 20.0;
        prop_assert_eq!(topp_budget(&scores, p).unwrap(), exhaustive_budget(&scores, p));
    }

    #[test]
    fn topp_is_monotone_in_p(scores in proptest::collection::vec(0.0f64..1.0, 1..30), p in 0.01f64..1.0, q in 0.01f64..1.0) {
        prop_assume!(scores.iter().sum::<f64>() > 0.0);
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        prop_assert!(topp_budget(&scores, lo).unwrap() <= topp_budget(&scores, hi).unwrap());
    }

    #[test]
    fn argtopk_matches_sort(scores in proptest::collection::vec(0u8..10, 1..30), k in 1usize..30) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        prop_assume!(k <= scores.len());
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        let mut want = order[..k].to_vec();
        want.sort();
        prop_assert_eq!(argtopk(&scores, k).unwrap(), want);
    }

    #[test]
    fn sparseformat_is_mask_union(
        verticals in proptest::collection::vec(0usize..96, 0..6),
        slashes in proptest::collection::vec(0usize..6, 0..4),
        block in prop_oneof![Just(8usize), Just(16), Just(32)],
    ) {
        let s = 96;
        let slashes: Vec<usize> = slashes.into_iter().filter(|&o| o < s / block).collect();
        let idx = sparseformat(&verticals, &slashes, s, block).unwrap();
        prop_assert_eq!(index_mask(&idx), union_mask(&verticals, &slashes, s, block));
        prop_assert_eq!(idx.covered_pairs(), index_mask(&idx).iter().filter(|x| **x).count() as u64);
        // bar columns never duplicate a selected block
        for qb in 0..idx.num_blocks() {
            for &m in idx.bar_cols(qb) {
                prop_assert!(!idx.has_block(qb, m / block));
            }
        }
    }

    #[test]
    fn sparseformat_is_idempotent(
        verticals in proptest::collection::vec(0usize..100, 0..6),
        slashes in proptest::collection::vec(0usize..7, 0..4),
    ) {
        let a = sparseformat(&verticals, &slashes, 100, 16).unwrap();
        let b = sparseformat(a.verticals(), a.slashes(), 100, 16).unwrap();
        prop_assert_eq!(a, b);
    }
}
