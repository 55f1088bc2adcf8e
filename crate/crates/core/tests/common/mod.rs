#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::f64::consts::SQRT_2;

use promptnav_core::field::{FieldParams, ObstacleCoefficients, PotentialGrid};
use promptnav_core::scene::{ObstacleCells, OccupancyGrid};
use rand::Rng;

pub const ACCEPTANCE_SCENE: &str = include_str!("../fixtures/acceptance_scene.json");

/// Random blocked cells, each assigned to one of `obstacles` ids.
pub fn random_grid(rng: &mut impl Rng, cols: usize, rows: usize, density: f64, obstacles: usize) -> OccupancyGrid {
    let families = ["Wall", "Grinder", "Chainsaw", "Robot", "Chair"];
    let mut groups: BTreeMap<String, ObstacleCells> = (0..obstacles)
        .map(|k| {
            let family = families[k % families.len()].to_string();
            (format!("o{k:02}"), ObstacleCells { family, cells: Vec::new() })
        })
        .collect();
    let ids: Vec<String> = groups.keys().cloned().collect();
    for idx in 0..cols * rows {
        if rng.gen_bool(density) {
            let id = &ids[rng.gen_range(0..ids.len())];
            groups.get_mut(id).unwrap().cells.push(idx);
        }
    }
    groups.retain(|_, o| !o.cells.is_empty());
    OccupancyGrid::from_cells(cols, rows, 0.1, groups)
}

pub fn random_free_cell(rng: &mut impl Rng, grid: &OccupancyGrid) -> (usize, usize) {
    loop {
        let (i, j) = (rng.gen_range(0..grid.cols), rng.gen_range(0..grid.rows));
        if !grid.is_blocked(grid.index(i, j)) {
            return (i, j);
        }
    }
}

pub fn random_params(rng: &mut impl Rng, grid: &OccupancyGrid) -> FieldParams {
    let obstacles = grid
        .obstacles
        .keys()
        .map(|id| {
            let coeff = ObstacleCoefficients { k_rep: rng.gen_range(0.0..5.0), d_max: rng.gen_range(0.2..5.0) };
            (id.clone(), coeff)
        })
        .collect();
    FieldParams { obstacles, mode: Default::default() }
}

/// Double loop over cells and obstacle cells, obstacles summed in id order.
pub fn brute_field(grid: &OccupancyGrid, params: &FieldParams) -> Vec<f64> {
    let mut out = vec![0.0; grid.cols * grid.rows];
    for (idx, slot) in out.iter_mut().enumerate() {
        let (ci, cj) = (idx % grid.cols, idx / grid.cols);
        for (id, obstacle) in &grid.obstacles {
            let c = params.obstacles[id];
            let mut best = f64::INFINITY;
            for &o in &obstacle.cells {
                let (oi, oj) = ((o % grid.cols) as f64, (o / grid.cols) as f64);
                let d = ((ci as f64 - oi).powi(2) + (cj as f64 - oj).powi(2)).sqrt() * grid.resolution;
                best = best.min(d);
            }
            if best < c.d_max {
                *slot += c.k_rep * (-best).exp();
            }
        }
    }
    out
}

fn free(grid: &OccupancyGrid, i: i64, j: i64) -> bool {
    i >= 0
        && j >= 0
        && (i as usize) < grid.cols
        && (j as usize) < grid.rows
        && !grid.is_blocked(j as usize * grid.cols + i as usize)
}

fn neighbours(grid: &OccupancyGrid, idx: usize) -> Vec<(usize, bool)> {
    let (i, j) = ((idx % grid.cols) as i64, (idx / grid.cols) as i64);
    let mut out = Vec::new();
    for di in -1..=1 {
        for dj in -1..=1 {
            if (di, dj) == (0, 0) || !free(grid, i + di, j + dj) {
                continue;
            }
            let diagonal = di != 0 && dj != 0;
            if diagonal && !(free(grid, i + di, j) && free(grid, i, j + dj)) {
                continue;
            }
            out.push((((j + dj) as usize) * grid.cols + (i + di) as usize, diagonal));
        }
    }
    out
}

#[derive(PartialEq)]
struct Item(f64, usize);
impl Eq for Item {}
impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

/// Dijkstra over `(orthogonal, diagonal)` step counts. At grid sizes up to a
/// few hundred cells distinct lengths differ by far more than rounding, so the
/// float ordering picks the exact optimum.
pub fn dijkstra_steps(grid: &OccupancyGrid, start: (usize, usize), goal: (usize, usize)) -> Option<(u32, u32)> {
    let n = grid.cols * grid.rows;
    let s = start.1 * grid.cols + start.0;
    let t = goal.1 * grid.cols + goal.0;
    let mut dist = vec![f64::INFINITY; n];
    let mut steps = vec![(0u32, 0u32); n];
    let mut heap = BinaryHeap::new();
    dist[s] = 0.0;
    heap.push(Item(0.0, s));
    while let Some(Item(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        if u == t {
            return Some(steps[u]);
        }
        for (v, diagonal) in neighbours(grid, u) {
            let nd = d + if diagonal { SQRT_2 } else { 1.0 };
            if nd < dist[v] {
                dist[v] = nd;
                let (o, g) = steps[u];
                steps[v] = if diagonal { (o, g + 1) } else { (o + 1, g) };
                heap.push(Item(nd, v));
            }
        }
    }
    None
}

/// Dijkstra on `len · (1 + beta · mean(G(u), G(v)))` edge costs.
pub fn dijkstra_weighted(
    grid: &OccupancyGrid,
    field: &PotentialGrid,
    beta: f64,
    start: (usize, usize),
    goal: (usize, usize),
) -> Option<f64> {
    let n = grid.cols * grid.rows;
    let s = start.1 * grid.cols + start.0;
    let t = goal.1 * grid.cols + goal.0;
    let mut dist = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    dist[s] = 0.0;
    heap.push(Item(0.0, s));
    while let Some(Item(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        if u == t {
            return Some(d);
        }
        for (v, diagonal) in neighbours(grid, u) {
            let len = if diagonal { SQRT_2 * grid.resolution } else { grid.resolution };
            let nd = d + len * (1.0 + beta * (field.values[u] + field.values[v]) / 2.0);
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Item(nd, v));
            }
        }
    }
    None
}

pub fn step_counts(cells: &[(usize, usize)]) -> (u32, u32) {
    let mut counts = (0, 0);
    for w in cells.windows(2) {
        if w[0].0 != w[1].0 && w[0].1 != w[1].1 {
            counts.1 += 1;
        } else {
            counts.0 += 1;
        }
    }
    counts
}

/// Consecutive cells are free 8-neighbours with no corner cut.
pub fn path_is_valid(grid: &OccupancyGrid, cells: &[(usize, usize)]) -> bool {
    cells.iter().all(|&(i, j)| free(grid, i as i64, j as i64))
        && cells.windows(2).all(|w| {
            let u = w[0].1 * grid.cols + w[0].0;
            let v = w[1].1 * grid.cols + w[1].0;
            neighbours(grid, u).iter().any(|&(n, _)| n == v)
        })
}

pub fn weighted_cost(grid: &OccupancyGrid, field: &PotentialGrid, beta: f64, cells: &[(usize, usize)]) -> f64 {
    cells
        .windows(2)
        .map(|w| {
            let u = w[0].1 * grid.cols + w[0].0;
            let v = w[1].1 * grid.cols + w[1].0;
            let diagonal = w[0].0 != w[1].0 && w[0].1 != w[1].1;
            let len = if diagonal { SQRT_2 * grid.resolution } else { grid.resolution };
            len * (1.0 + beta * (field.values[u] + field.values[v]) / 2.0)
        })
        .sum()
}

/// Log-odds closed form for a chain of likelihoods, clamped like the store.
pub fn closed_form(prior: f64, likelihoods: &[f64]) -> f64 {
    let eps = 1e-6;
    let p = prior.clamp(eps, 1.0 - eps);
    let mut num = p;
    let mut den = 1.0 - p;
    for &l in likelihoods {
        num *= l;
        den *= 1.0 - l;
    }
    (num / (num + den)).clamp(eps, 1.0 - eps)
}
