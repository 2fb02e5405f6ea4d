mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use logsad::linalg::RowMatrix;
use logsad::patch::{
    build_bank, coreset_select, patch_score, upsample_map, AnomalyMap, FeatureStack, StageGrid,
};
use logsad::NUM_STAGES;

fn stage_rows(stack: &FeatureStack, k: usize) -> Vec<Vec<f32>> {
    stack
        .stage(k)
        .features()
        .iter_rows()
        .map(<[f32]>::to_vec)
        .collect()
}

#[test]
fn random_sixteen_patch_query_matches_oracle() {
    let mut rng = common::rng(16);
    let query = common::random_stack(&mut rng, 4, 4, 8);
    let bank: Vec<Vec<Vec<f32>>> = (0..NUM_STAGES)
        .map(|_| common::unit_rows(&mut rng, 32, 8))
        .collect();
    let (s_p, map) = patch_score(&query, &common::bank_from_rows(&bank)).unwrap();
    let oracle = common::brute_patch_map(&query, &bank);
    for (a, b) in map.data.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-6);
    }
    assert!((s_p - oracle.iter().copied().fold(0.0, f64::max)).abs() < 1e-6);
}

#[test]
fn query_identical_to_bank_scores_zero() {
    let mut rng = common::rng(1);
    let query = common::random_stack(&mut rng, 3, 3, 6);
    let bank: Vec<Vec<Vec<f32>>> = (0..NUM_STAGES).map(|k| stage_rows(&query, k)).collect();
    let (s_p, map) = patch_score(&query, &common::bank_from_rows(&bank)).unwrap();
    assert!(s_p.abs() < 1e-6);
    assert!(map.data.iter().all(|v| v.abs() < 1e-6));
}

#[test]
fn ratio_one_keeps_every_patch_and_is_deterministic() {
    let mut rng = common::rng(2);
    let stacks: Vec<FeatureStack> = (0..4)
        .map(|_| common::random_stack(&mut rng, 8, 8, 4))
        .collect();
    let a = build_bank(&stacks, 1.0, 3).unwrap();
    let b = build_bank(&stacks, 1.0, 3).unwrap();
    assert_eq!(a.rows_per_stage(), vec![4 * 64; NUM_STAGES]);
    assert_eq!(a, b);
}

#[test]
fn half_ratio_on_full_grid_matches_greedy_oracle() {
    // one 64x64 image: 4096 patches, 2048 kept per stage
    let mut rng = common::rng(0);
    let stack = common::random_stack(&mut rng, 64, 64, 4);
    let bank = build_bank(std::slice::from_ref(&stack), 0.5, 0).unwrap();
    assert_eq!(bank.rows_per_stage(), vec![2048; NUM_STAGES]);
    // the oracle is quadratic per pick, so check stage 1 only
    let rows = stage_rows(&stack, 0);
    let expected = common::brute_greedy(&rows, 2048, 0);
    assert_eq!(bank.coreset.selected_indices[0], expected);
}

#[test]
fn upsampled_ramp_rows_are_monotone() {
    let map = AnomalyMap::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]);
    let up = upsample_map(&map, 4).unwrap();
    for r in 0..4 {
        let row: Vec<f64> = (0..4).map(|c| up.get(r, c)).collect();
        assert_eq!(row, vec![0.0, 0.25, 0.75, 1.0]);
    }
}

fn query_and_bank() -> impl Strategy<Value = (u64, usize, usize, usize)> {
    (any::<u64>(), 1usize..=8, 1usize..=32, 2usize..=8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_brute_force((seed, side, n, dim) in query_and_bank()) {
        let mut rng = common::rng(seed);
        let query = common::random_stack(&mut rng, side, side, dim);
        let bank: Vec<Vec<Vec<f32>>> = (0..NUM_STAGES).map(|_| common::unit_rows(&mut rng, n, dim)).collect();
        let (s_p, map) = patch_score(&query, &common::bank_from_rows(&bank)).unwrap();
        let oracle = common::brute_patch_map(&query, &bank);
        for (a, b) in map.data.iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-6);
        }
        prop_assert!((0.0..=2.0).contains(&s_p));
    }

    #[test]
    fn adding_bank_rows_never_raises_scores((seed, side, n, dim) in query_and_bank(), extra in 1usize..8) {
        let mut rng = common::rng(seed);
        let query = common::random_stack(&mut rng, side, side, dim);
        let small: Vec<Vec<Vec<f32>>> = (0..NUM_STAGES).map(|_| common::unit_rows(&mut rng, n, dim)).collect();
        let mut large = small.clone();
        for rows in &mut large {
            rows.extend(common::unit_rows(&mut rng, extra, dim));
        }
        let (sa, ma) = patch_score(&query, &common::bank_from_rows(&small)).unwrap();
        let (sb, mb) = patch_score(&query, &common::bank_from_rows(&large)).unwrap();
        prop_assert!(sb <= sa);
        prop_assert!(mb.data.iter().zip(&ma.data).all(|(b, a)| b <= a));
    }

    #[test]
    fn bank_row_order_is_irrelevant((seed, side, n, dim) in query_and_bank()) {
        let mut rng = common::rng(seed);
        let query = common::random_stack(&mut rng, side, side, dim);
        let bank: Vec<Vec<Vec<f32>>> = (0..NUM_STAGES).map(|_| common::unit_rows(&mut rng, n, dim)).collect();
        let mut shuffled = bank.clone();
        for rows in &mut shuffled {
            rows.shuffle(&mut rng);
        }
        let a = patch_score(&query, &common::bank_from_rows(&bank)).unwrap();
        let b = patch_score(&query, &common::bank_from_rows(&shuffled)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn upsampling_stays_in_range(seed in any::<u64>(), h in 1usize..6, w in 1usize..6, side in 6usize..20) {
        let mut rng = common::rng(seed);
        let data: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.0..2.0)).collect();
        let map = AnomalyMap::new(h, w, data);
        let up = upsample_map(&map, side).unwrap();
        let lo = map.data.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(up.data.iter().all(|&v| v >= lo - 1e-12 && v <= map.max() + 1e-12));
        prop_assert!(up.max() <= map.max() + 1e-12);
    }
}

#[test]
fn upsampling_at_same_side_is_identity() {
    let mut rng = common::rng(5);
    let data: Vec<f64> = (0..25).map(|_| rng.random_range(0.0..2.0)).collect();
    let map = AnomalyMap::new(5, 5, data);
    assert_eq!(upsample_map(&map, 5).unwrap(), map);
    assert!(upsample_map(&map, 4).is_err());
}

#[test]
fn stage_grids_must_agree() {
    let mut rng = common::rng(9);
    let a = StageGrid::new(
        2,
        2,
        RowMatrix::from_rows(&common::unit_rows(&mut rng, 4, 3)),
    )
    .unwrap();
    let b = StageGrid::new(
        1,
        4,
        RowMatrix::from_rows(&common::unit_rows(&mut rng, 4, 3)),
    )
    .unwrap();
    assert!(FeatureStack::new(vec![a.clone(), a.clone(), a.clone(), b]).is_err());
    assert!(FeatureStack::new(vec![a.clone(), a.clone(), a]).is_err());
}

#[test]
fn coreset_of_identical_points_takes_lowest_indices() {
    let rows = vec![vec![1.0f32, 0.0]; 6];
    let m = RowMatrix::from_rows(&rows);
    let picked = coreset_select(&m, 3, 4).unwrap();
    assert_eq!(picked, common::brute_greedy(&rows, 3, 4));
}
