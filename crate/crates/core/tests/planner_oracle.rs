mod common;

use common::*;
use promptnav_core::field::{build_field, FieldParams, PotentialGrid};
use promptnav_core::planner::{astar_baseline, mha_star, CostMode, PathResult, PlanError, PlannerParams};
use promptnav_core::scene::OccupancyGrid;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 0x00a5_7a12;

struct Instance {
    grid: OccupancyGrid,
    field: PotentialGrid,
    start: (usize, usize),
    goal: (usize, usize),
}

fn corpus() -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    (0..200)
        .map(|_| {
            let grid = random_grid(&mut rng, 50, 50, 0.2, 5);
            let params = random_params(&mut rng, &grid);
            let field = build_field(&grid, &params).unwrap();
            let start = random_free_cell(&mut rng, &grid);
            let goal = random_free_cell(&mut rng, &grid);
            Instance { grid, field, start, goal }
        })
        .collect()
}

#[test]
fn baseline_matches_dijkstra_exactly() {
    let mut solved = 0;
    for inst in corpus() {
        let oracle = dijkstra_steps(&inst.grid, inst.start, inst.goal);
        match astar_baseline(&inst.grid, inst.start, inst.goal) {
            Ok(path) => {
                let steps = oracle.expect("planner found a path the oracle did not");
                assert!(path_is_valid(&inst.grid, &path.cells));
                assert_eq!(step_counts(&path.cells), steps);
                let exact = (steps.0 as f64 + steps.1 as f64 * std::f64::consts::SQRT_2) * 0.1;
                assert_eq!(path.cost, exact);
                solved += 1;
            }
            Err(PlanError::NoPath) => assert_eq!(oracle, None),
            Err(e) => panic!("{e}"),
        }
    }
    assert!(solved > 150, "corpus too disconnected: {solved}");
}

#[test]
fn mha_heuristic_only_within_suboptimality_bound() {
    let params = PlannerParams::default();
    for inst in corpus() {
        let Some(steps) = dijkstra_steps(&inst.grid, inst.start, inst.goal) else { continue };
        let opt = (steps.0 as f64 + steps.1 as f64 * std::f64::consts::SQRT_2) * 0.1;
        let path = mha_star(&inst.grid, &inst.field, inst.start, inst.goal, &params).unwrap();
        assert!(path_is_valid(&inst.grid, &path.cells));
        assert_eq!(path.cells.first(), Some(&inst.start));
        assert_eq!(path.cells.last(), Some(&inst.goal));
        assert!(path.cost <= params.w1 * params.w2 * opt + 1e-12, "{} > 4 * {opt}", path.cost);
    }
}

#[test]
fn mha_cost_augmented_within_suboptimality_bound() {
    let params = PlannerParams { cost_mode: CostMode::CostAugmented, ..PlannerParams::default() };
    for inst in corpus() {
        let Some(opt) = dijkstra_weighted(&inst.grid, &inst.field, params.beta, inst.start, inst.goal) else {
            continue;
        };
        let path = mha_star(&inst.grid, &inst.field, inst.start, inst.goal, &params).unwrap();
        assert!(path_is_valid(&inst.grid, &path.cells));
        let recomputed = weighted_cost(&inst.grid, &inst.field, params.beta, &path.cells);
        assert!((recomputed - path.cost).abs() <= 1e-9 * path.cost.max(1.0));
        assert!(opt <= path.cost * (1.0 + 1e-12));
        assert!(path.cost <= params.w1 * params.w2 * opt * (1.0 + 1e-12));
    }
}

#[test]
fn zero_field_unit_weights_reduce_to_baseline() {
    let params = PlannerParams { w1: 1.0, w2: 1.0, ..PlannerParams::default() };
    for inst in corpus() {
        let zero = build_field(&inst.grid, &FieldParams::uniform(&inst.grid, 0.0, 5.0)).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
        match astar_baseline(&inst.grid, inst.start, inst.goal) {
            Ok(base) => {
                let mha = mha_star(&inst.grid, &zero, inst.start, inst.goal, &params).unwrap();
                assert_eq!(mha.cost, base.cost);
                let aug = PlannerParams { cost_mode: CostMode::CostAugmented, ..params };
                let mha = mha_star(&inst.grid, &zero, inst.start, inst.goal, &aug).unwrap();
                assert!((mha.cost - base.cost).abs() <= 1e-9);
            }
            Err(_) => {
                assert_eq!(mha_star(&inst.grid, &zero, inst.start, inst.goal, &params), Err(PlanError::NoPath));
            }
        }
    }
}

#[test]
fn endpoint_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grid = random_grid(&mut rng, 10, 10, 0.3, 1);
    let blocked = grid.coords(grid.blocked_cells().next().unwrap());
    let free = random_free_cell(&mut rng, &grid);
    assert!(matches!(astar_baseline(&grid, blocked, free), Err(PlanError::BlockedEndpoint { .. })));
    assert!(matches!(astar_baseline(&grid, free, (10, 0)), Err(PlanError::OutOfRange { .. })));
    let small = PotentialGrid::zeros(5, 5, 0.1);
    let params = PlannerParams::default();
    assert!(matches!(mha_star(&grid, &small, free, free, &params), Err(PlanError::DimensionMismatch { .. })));
    let bad = PlannerParams { w1: 0.5, ..params };
    let field = PotentialGrid::zeros(10, 10, 0.1);
    assert!(matches!(mha_star(&grid, &field, free, free, &bad), Err(PlanError::InvalidParams(_))));
}

#[test]
fn same_cell_is_a_single_cell_path() {
    let grid = OccupancyGrid::from_cells(4, 4, 0.1, Default::default());
    let path = astar_baseline(&grid, (2, 2), (2, 2)).unwrap();
    assert_eq!(path.cells, vec![(2, 2)]);
    assert_eq!(path.cost, 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn path_result_invariants(seed in any::<u64>(), aug in any::<bool>(), w1 in 1.0f64..4.0, w2 in 1.0f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = random_grid(&mut rng, 20, 15, 0.25, 3);
        let field = build_field(&grid, &random_params(&mut rng, &grid)).unwrap();
        let (s, t) = (random_free_cell(&mut rng, &grid), random_free_cell(&mut rng, &grid));
        let mode = if aug { CostMode::CostAugmented } else { CostMode::HeuristicOnly };
        let params = PlannerParams { w1, w2, cost_mode: mode, ..PlannerParams::default() };
        match mha_star(&grid, &field, s, t, &params) {
            Ok(path) => {
                prop_assert_eq!(path.cells.first(), Some(&s));
                prop_assert_eq!(path.cells.last(), Some(&t));
                prop_assert!(path_is_valid(&grid, &path.cells));
                prop_assert!(path.cost >= 0.0 && path.length_m >= 0.0);
                let steps = step_counts(&path.cells);
                let len = (steps.0 as f64 + steps.1 as f64 * std::f64::consts::SQRT_2) * 0.1;
                prop_assert!((path.length_m - len).abs() < 1e-12);
                prop_assert!(path.cost >= path.length_m - 1e-12);
                let back: PathResult = serde_json::from_str(&path.to_json()).unwrap();
                prop_assert_eq!(back.cells, path.cells);
            }
            Err(e) => {
                prop_assert_eq!(e, PlanError::NoPath);
                prop_assert_eq!(dijkstra_steps(&grid, s, t), None);
            }
        }
    }
}
