mod common;

use common::index_mask;
use proptest::prelude::*;
use vsring_core::balance::{analyze, imbalance_degree};
use vsring_core::layout::*;
use vsring_core::pattern::SparseIndex;
use vsring_core::ring::{plan_step_logs, CostModel, ExecMode, RingConfig, RingSchedule};
use vsring_core::synth::random_sparse_index;

fn kind() -> impl Strategy<Value = LayoutKind> {
    prop_oneof![Just(LayoutKind::Zigzag), Just(LayoutKind::StripedToken), Just(LayoutKind::StripedBlock)]
}

fn dense_rank_flops(kind: LayoutKind, w: usize, block: usize, s: usize, d: usize) -> Vec<u64> {
    let layout = Layout::new(kind, w, block, s).unwrap();
    let idx = SparseIndex::full_causal(s, block).unwrap();
    let sch = RingSchedule::single(w);
    (0..w).map(|r| convert_index(&idx, &layout, r, &sch.order(r)).unwrap().stats(d).flops).collect()
}

#[test]
fn zigzag_small_example() {
    let asg = Layout::new(LayoutKind::Zigzag, 2, 64, 8).unwrap().assign().unwrap();
    assert_eq!(asg.tokens_of(0), &[0, 1, 6, 7]);
    assert_eq!(asg.tokens_of(1), &[2, 3, 4, 5]);
    let asg = Layout::new(LayoutKind::StripedToken, 4, 64, 8).unwrap().assign().unwrap();
    assert_eq!(asg.tokens_of(1), &[1, 5]);
    let asg = Layout::new(LayoutKind::StripedBlock, 2, 2, 8).unwrap().assign().unwrap();
    assert_eq!(asg.tokens_of(0), &[0, 1, 4, 5]);
}

#[test]
fn dense_causal_zigzag_and_token_stripes_are_balanced() {
    for w in [2, 4, 8] {
        for kind in [LayoutKind::Zigzag, LayoutKind::StripedToken] {
            let flops = dense_rank_flops(kind, w, 16, 512, 8);
            assert!(flops.iter().all(|&f| f == flops[0]), "{kind:?} W={w}: {flops:?}");
        }
    }
}

#[test]
fn dense_causal_block_stripes_follow_rank_offset() {
    // rank r holds blocks r, r + W, …; block r + W·i attends to r + W·i + 1
    // key blocks, so later ranks do more work
    for (w, s, block) in [(2, 256, 16), (4, 512, 16), (8, 512, 16), (32, 8192, 64)] {
        let d = 8;
        let n = s / (w * block);
        let tile = 4 * (block * block * d) as u64;
        let want: Vec<u64> = (0..w).map(|r| (0..n).map(|i| (r + w * i + 1) as u64).sum::<u64>() * tile).collect();
        assert_eq!(dense_rank_flops(LayoutKind::StripedBlock, w, block, s, d), want);
        let ideal = want.iter().sum::<u64>() as f64 / w as f64;
        let id = imbalance_degree(&want.iter().map(|&f| f as f64).collect::<Vec<_>>()).unwrap();
        assert!((id - want[w - 1] as f64 / ideal).abs() < 1e-12);
    }
}

#[test]
fn dense_causal_per_step_worker_balance() {
    // zigzag: every step carries the same work on every rank
    let cfg = |kind| RingConfig {
        schedule: RingSchedule::single(8),
        layout: Layout::new(kind, 8, 16, 512).unwrap(),
        cost: CostModel::default(),
        mode: ExecMode::Sequential,
    };
    let idx = SparseIndex::full_causal(512, 16).unwrap();
    let zig = analyze(&plan_step_logs(&idx, &cfg(LayoutKind::Zigzag), 8).unwrap()).unwrap();
    assert!((zig.worker_id - 1.0).abs() < 1e-12);

    // striped blocks: at step s ranks r ≥ s hold a chunk that starts at or
    // before their own, giving n(n+1)/2 tiles against n(n−1)/2 for r < s
    let striped = analyze(&plan_step_logs(&idx, &cfg(LayoutKind::StripedBlock), 8).unwrap()).unwrap();
    let (w, n) = (8.0, 4.0);
    let (hi, lo) = (n * (n + 1.0) / 2.0, n * (n - 1.0) / 2.0);
    let want = (0..8).map(|s| hi * w / (hi * (w - s as f64) + lo * s as f64)).sum::<f64>() / w;
    assert!((striped.worker_id - want).abs() < 1e-12);
}

#[test]
fn rejects_bad_ring_orders() {
    let layout = Layout::new(LayoutKind::Zigzag, 4, 16, 64).unwrap();
    let idx = SparseIndex::full_causal(64, 16).unwrap();
    assert!(convert_index(&idx, &layout, 0, &[0, 1, 2]).is_err());
    assert!(convert_index(&idx, &layout, 0, &[1, 0, 2, 3]).is_err());
    assert!(convert_index(&idx, &layout, 0, &[0, 1, 1, 3]).is_err());
    assert!(convert_index(&idx, &layout, 4, &[0, 1, 2, 3]).is_err());
    let other = SparseIndex::full_causal(128, 16).unwrap();
    assert!(convert_index(&other, &layout, 0, &[0, 1, 2, 3]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn assignment_is_a_bijection(kind in kind(), w in 1usize..6, mult in 1usize..4) {
        let (block, s) = (4, 4 * w * 2 * mult);
        let asg = Layout::new(kind, w, block, s).unwrap().assign().unwrap();
        let mut seen = vec![false; s];
        for r in 0..w {
            let toks = asg.tokens_of(r);
            prop_assert_eq!(toks.len(), s / w);
            prop_assert!(toks.windows(2).all(|p| p[0] < p[1]));
            for (slot, &t) in toks.iter().enumerate() {
                prop_assert!(!seen[t]);
                seen[t] = true;
                prop_assert_eq!(asg.locate(t), (r, slot));
            }
        }
    }

    #[test]
    fn plans_cover_the_index_exactly(kind in kind(), w in prop_oneof![Just(2usize), Just(4)], outer in prop_oneof![Just(1usize), Just(2)], seed in any::<u64>()) {
        let (block, s) = (8, 128);
        prop_assume!(w % outer == 0);
        let idx = random_sparse_index(s, block, seed).unwrap();
        let layout = Layout::new(kind, w, block, s).unwrap();
        let sch = RingSchedule::hierarchical(w / outer, outer);
        let asg = layout.assign().unwrap();
        let plans: Vec<_> = (0..w).map(|r| convert_index(&idx, &layout, r, &sch.order(r)).unwrap()).collect();
        let counts = coverage_counts(&idx, &asg, &plans);
        prop_assert!(counts.iter().all(|&c| c <= 1));
        prop_assert_eq!(counts.mapv(|c| c == 1), index_mask(&idx));
    }

    #[test]
    fn rank_totals_do_not_depend_on_ring_order(kind in kind(), seed in any::<u64>()) {
        let idx = random_sparse_index(128, 8, seed).unwrap();
        let layout = Layout::new(kind, 4, 8, 128).unwrap();
        for r in 0..4 {
            let a = convert_index(&idx, &layout, r, &RingSchedule::single(4).order(r)).unwrap().stats(16);
            let b = convert_index(&idx, &layout, r, &RingSchedule::hierarchical(2, 2).order(r)).unwrap().stats(16);
            prop_assert_eq!(a, b);
        }
    }
}
