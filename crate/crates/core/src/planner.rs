//! 8-connected grid search: plain A* and shared multi-heuristic A*.
//!
//! Steps cost `res` orthogonally and `√2·res` diagonally; a diagonal step
//! needs both orthogonal neighbours free (no corner cutting). Pure-length
//! costs are tracked exactly as (orthogonal, diagonal) step counts so that
//! equal-cost paths compare equal regardless of summation order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::PotentialGrid;
use crate::metrics::path_length;
use crate::scene::OccupancyGrid;

pub type Cell = (usize, usize);

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("{which} cell ({}, {}) is outside the {cols}x{rows} grid", cell.0, cell.1)]
    OutOfRange { which: &'static str, cell: Cell, cols: usize, rows: usize },
    #[error("{which} cell ({}, {}) is blocked", cell.0, cell.1)]
    BlockedEndpoint { which: &'static str, cell: Cell },
    #[error("no path from start to goal")]
    NoPath,
    #[error("field is {field_cols}x{field_rows} but grid is {cols}x{rows}")]
    DimensionMismatch { field_cols: usize, field_rows: usize, cols: usize, rows: usize },
    #[error("invalid planner parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    /// Potential only shapes the inadmissible heuristic; edge cost is length.
    #[default]
    HeuristicOnly,
    /// Edge cost is `length · (1 + beta · mean(G(u), G(v)))`.
    CostAugmented,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    pub connectivity: u8,
    pub w1: f64,
    pub w2: f64,
    pub lambda: f64,
    pub cost_mode: CostMode,
    pub beta: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            connectivity: 8,
            w1: 2.0,
            w2: 2.0,
            lambda: 1.0,
            cost_mode: CostMode::HeuristicOnly,
            beta: 1.0,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |msg: String| Err(PlanError::InvalidParams(msg));
        if self.connectivity != 8 {
            return bad(format!("only 8-connectivity is supported, got {}", self.connectivity));
        }
        if !(self.w1.is_finite() && self.w1 >= 1.0) {
            return bad(format!("w1 must be >= 1, got {}", self.w1));
        }
        if !(self.w2.is_finite() && self.w2 >= 1.0) {
            return bad(format!("w2 must be >= 1, got {}", self.w2));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    pub cells: Vec<Cell>,
    pub cost: f64,
    pub length_m: f64,
    #[serde(skip)]
    pub expansions: usize,
    pub planner: String,
    pub params: serde_json::Value,
}

impl PathResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("path serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("path serializes")
    }

    pub fn reversed(&self) -> PathResult {
        let mut out = self.clone();
        out.cells.reverse();
        out
    }
}

/// Path cost as a count of orthogonal and diagonal steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepCount {
    pub orthogonal: u32,
    pub diagonal: u32,
}

impl StepCount {
    pub fn meters(&self, resolution: f64) -> f64 {
        (self.orthogonal as f64 + self.diagonal as f64 * SQRT_2) * resolution
    }

    /// Exact comparison of `a + b·√2` values.
    pub fn cmp_exact(&self, other: &StepCount) -> Ordering {
        let x = self.orthogonal as i64 - other.orthogonal as i64;
        let y = other.diagonal as i64 - self.diagonal as i64;
        // Compare x against y·√2.
        match (x >= 0, y >= 0) {
            (true, false) => Ordering::Greater,
            (false, true) => Ordering::Less,
            (true, true) => (x * x).cmp(&(2 * y * y)),
            (false, false) => (2 * y * y).cmp(&(x * x)),
        }
    }
}

trait PathCost: Copy {
    fn zero() -> Self;
    fn plus(self, step: Self) -> Self;
    fn less_than(&self, other: &Self) -> bool;
    fn value(&self, resolution: f64) -> f64;
}

impl PathCost for StepCount {
    fn zero() -> Self {
        StepCount::default()
    }
    fn plus(self, step: Self) -> Self {
        StepCount {
            orthogonal: self.orthogonal + step.orthogonal,
            diagonal: self.diagonal + step.diagonal,
        }
    }
    fn less_than(&self, other: &Self) -> bool {
        self.cmp_exact(other) == Ordering::Less
    }
    fn value(&self, resolution: f64) -> f64 {
        self.meters(resolution)
    }
}

impl PathCost for f64 {
    fn zero() -> Self {
        0.0
    }
    fn plus(self, step: Self) -> Self {
        self + step
    }
    fn less_than(&self, other: &Self) -> bool {
        self < other
    }
    fn value(&self, _resolution: f64) -> f64 {
        *self
    }
}

const NEIGHBOURS: [(isize, isize); 8] =
    [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Free 8-neighbours of `idx` with a flag telling whether the move is diagonal.
fn successors(grid: &OccupancyGrid, idx: usize, out: &mut Vec<(usize, bool)>) {
    out.clear();
    let (i, j) = grid.coords(idx);
    let free = |i: isize, j: isize| -> Option<usize> {
        if i < 0 || j < 0 || i as usize >= grid.cols || j as usize >= grid.rows {
            return None;
        }
        let n = grid.index(i as usize, j as usize);
        (!grid.is_blocked(n)).then_some(n)
    };
    let (i, j) = (i as isize, j as isize);
    for (di, dj) in NEIGHBOURS {
        let Some(n) = free(i + di, j + dj) else { continue };
        let diagonal = di != 0 && dj != 0;
        if diagonal && (free(i + di, j).is_none() || free(i, j + dj).is_none()) {
            continue;
        }
        out.push((n, diagonal));
    }
}

fn euclid(grid: &OccupancyGrid, a: usize, b: usize) -> f64 {
    let (ai, aj) = grid.coords(a);
    let (bi, bj) = grid.coords(b);
    let di = ai.abs_diff(bi) as f64;
    let dj = aj.abs_diff(bj) as f64;
    (di * di + dj * dj).sqrt() * grid.resolution
}

fn check_endpoint(grid: &OccupancyGrid, which: &'static str, cell: Cell) -> Result<usize, PlanError> {
    if cell.0 >= grid.cols || cell.1 >= grid.rows {
        return Err(PlanError::OutOfRange { which, cell, cols: grid.cols, rows: grid.rows });
    }
    let idx = grid.index(cell.0, cell.1);
    if grid.is_blocked(idx) {
        return Err(PlanError::BlockedEndpoint { which, cell });
    }
    Ok(idx)
}

/// Min-heap entry ordered by key, then heuristic, then cell index.
#[derive(Debug, Clone, Copy)]
struct Entry {
    key: f64,
    h: f64,
    idx: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .key
            .total_cmp(&self.key)
            .then_with(|| other.h.total_cmp(&self.h))
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

/// Priority queue with lazy deletion: an entry is live only while its cell is
/// marked open here and its key matches the latest one pushed.
struct OpenList {
    heap: BinaryHeap<Entry>,
    open: Vec<bool>,
    key: Vec<f64>,
}

impl OpenList {
    fn new(n: usize) -> Self {
        OpenList { heap: BinaryHeap::new(), open: vec![false; n], key: vec![f64::INFINITY; n] }
    }

    fn push(&mut self, idx: usize, key: f64, h: f64) {
        self.open[idx] = true;
        self.key[idx] = key;
        self.heap.push(Entry { key, h, idx });
    }

    fn remove(&mut self, idx: usize) {
        self.open[idx] = false;
    }

    fn purge(&mut self) {
        while let Some(top) = self.heap.peek() {
            if self.open[top.idx] && self.key[top.idx].to_bits() == top.key.to_bits() {
                return;
            }
            self.heap.pop();
        }
    }

    fn min_key(&mut self) -> f64 {
        self.purge();
        self.heap.peek().map_or(f64::INFINITY, |e| e.key)
    }

    fn pop(&mut self) -> Option<usize> {
        self.purge();
        let e = self.heap.pop()?;
        self.open[e.idx] = false;
        Some(e.idx)
    }
}

fn trace(grid: &OccupancyGrid, parent: &[usize], goal: usize) -> Vec<Cell> {
    let mut cells = vec![grid.coords(goal)];
    let mut cur = goal;
    while parent[cur] != usize::MAX {
        cur = parent[cur];
        cells.push(grid.coords(cur));
    }
    cells.reverse();
    cells
}

fn astar_generic<C: PathCost>(
    grid: &OccupancyGrid,
    start: usize,
    goal: usize,
    step: impl Fn(usize, usize, bool) -> C,
) -> Result<(Vec<Cell>, C, usize), PlanError> {
    let n = grid.len();
    let mut g: Vec<Option<C>> = vec![None; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = OpenList::new(n);
    let mut succ = Vec::with_capacity(8);
    let mut expansions = 0;

    g[start] = Some(C::zero());
    let h = euclid(grid, start, goal);
    open.push(start, h, h);
    while let Some(s) = open.pop() {
        if s == goal {
            let cost = g[goal].unwrap();
            return Ok((trace(grid, &parent, goal), cost, expansions));
        }
        closed[s] = true;
        expansions += 1;
        let gs = g[s].unwrap();
        successors(grid, s, &mut succ);
        for &(t, diagonal) in &succ {
            if closed[t] {
                continue;
            }
            let candidate = gs.plus(step(s, t, diagonal));
            if g[t].is_none_or(|old| candidate.less_than(&old)) {
                g[t] = Some(candidate);
                parent[t] = s;
                let h = euclid(grid, t, goal);
                open.push(t, candidate.value(grid.resolution) + h, h);
            }
        }
    }
    Err(PlanError::NoPath)
}

fn lattice_step(_: usize, _: usize, diagonal: bool) -> StepCount {
    if diagonal {
        StepCount { orthogonal: 0, diagonal: 1 }
    } else {
        StepCount { orthogonal: 1, diagonal: 0 }
    }
}

/// Shortest 8-connected path by length, with the Euclidean heuristic.
pub fn astar_baseline(grid: &OccupancyGrid, start: Cell, goal: Cell) -> Result<PathResult, PlanError> {
    let s = check_endpoint(grid, "start", start)?;
    let t = check_endpoint(grid, "goal", goal)?;
    let (cells, cost, expansions) = astar_generic(grid, s, t, lattice_step)?;
    Ok(PathResult {
        length_m: path_length(&cells, grid.resolution),
        cost: cost.meters(grid.resolution),
        cells,
        expansions,
        planner: "astar".into(),
        params: serde_json::json!({}),
    })
}

/// Shared multi-heuristic A* with the Euclidean anchor and one potential-aware
/// heuristic `h0 + lambda·G`. The returned cost is within `w1·w2` of optimal
/// for the active cost mode.
pub fn mha_star(
    grid: &OccupancyGrid,
    field: &PotentialGrid,
    start: Cell,
    goal: Cell,
    params: &PlannerParams,
) -> Result<PathResult, PlanError> {
    params.validate()?;
    if field.cols != grid.cols || field.rows != grid.rows {
        return Err(PlanError::DimensionMismatch {
            field_cols: field.cols,
            field_rows: field.rows,
            cols: grid.cols,
            rows: grid.rows,
        });
    }
    let s = check_endpoint(grid, "start", start)?;
    let t = check_endpoint(grid, "goal", goal)?;
    let res = grid.resolution;
    let (cells, cost, expansions) = match params.cost_mode {
        CostMode::HeuristicOnly => {
            let (cells, cost, e) = mha_generic(grid, field, s, t, params, lattice_step)?;
            (cells, cost.meters(res), e)
        }
        CostMode::CostAugmented => {
            let beta = params.beta;
            let step = |u: usize, v: usize, diagonal: bool| {
                let len = if diagonal { SQRT_2 * res } else { res };
                len * (1.0 + beta * (field.get(u) + field.get(v)) / 2.0)
            };
            mha_generic(grid, field, s, t, params, step)?
        }
    };
    Ok(PathResult {
        length_m: path_length(&cells, res),
        cost,
        cells,
        expansions,
        planner: "mha*".into(),
        params: serde_json::to_value(params).expect("params serialize"),
    })
}

fn mha_generic<C: PathCost>(
    grid: &OccupancyGrid,
    field: &PotentialGrid,
    start: usize,
    goal: usize,
    params: &PlannerParams,
    step: impl Fn(usize, usize, bool) -> C,
) -> Result<(Vec<Cell>, C, usize), PlanError> {
    let n = grid.len();
    let res = grid.resolution;
    let (w1, w2) = (params.w1, params.w2);
    let h0 = |c: usize| euclid(grid, c, goal);
    let h1 = |c: usize| h0(c) + params.lambda * field.get(c);

    let mut g: Vec<Option<C>> = vec![None; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed_anchor = vec![false; n];
    let mut closed_inad = vec![false; n];
    let mut anchor = OpenList::new(n);
    let mut inad = OpenList::new(n);
    let mut succ = Vec::with_capacity(8);
    let mut expansions = 0;

    let g_value = |g: &[Option<C>], c: usize| g[c].map_or(f64::INFINITY, |v| v.value(res));

    g[start] = Some(C::zero());
    anchor.push(start, w1 * h0(start), h0(start));
    inad.push(start, w1 * h1(start), h1(start));

    let mut expand = |s: usize,
                      g: &mut Vec<Option<C>>,
                      parent: &mut Vec<usize>,
                      anchor: &mut OpenList,
                      inad: &mut OpenList,
                      closed_anchor: &[bool],
                      closed_inad: &[bool]| {
        anchor.remove(s);
        inad.remove(s);
        let gs = g[s].unwrap();
        successors(grid, s, &mut succ);
        for &(t, diagonal) in &succ {
            let candidate = gs.plus(step(s, t, diagonal));
            if g[t].is_none_or(|old| candidate.less_than(&old)) {
                g[t] = Some(candidate);
                parent[t] = s;
                let gv = candidate.value(res);
                let key0 = gv + w1 * h0(t);
                if !closed_anchor[t] {
                    anchor.push(t, key0, h0(t));
                }
                if !closed_inad[t] {
                    let key1 = gv + w1 * h1(t);
                    if key1 <= w2 * key0 {
                        inad.push(t, key1, h1(t));
                    }
                }
            }
        }
    };

    loop {
        let anchor_min = anchor.min_key();
        if anchor_min == f64::INFINITY {
            return Err(PlanError::NoPath);
        }
        let inad_min = inad.min_key();
        let goal_g = g_value(&g, goal);
        if inad_min <= w2 * anchor_min {
            if goal_g <= inad_min {
                break;
            }
            let s = inad.pop().expect("non-empty inadmissible queue");
            expand(s, &mut g, &mut parent, &mut anchor, &mut inad, &closed_anchor, &closed_inad);
            closed_inad[s] = true;
        } else {
            if goal_g <= anchor_min {
                break;
            }
            let s = anchor.pop().expect("non-empty anchor queue");
            expand(s, &mut g, &mut parent, &mut anchor, &mut inad, &closed_anchor, &closed_inad);
            closed_anchor[s] = true;
        }
        expansions += 1;
    }
    // A node closed in the anchor search can still have its g lowered later
    // without its descendants being refreshed, so the traced path may be
    // cheaper than g(goal). Report what the returned cells actually cost.
    let cells = trace(grid, &parent, goal);
    let cost = cells.windows(2).fold(C::zero(), |acc, w| {
        let (u, v) = (grid.index(w[0].0, w[0].1), grid.index(w[1].0, w[1].1));
        acc.plus(step(u, v, w[0].0 != w[1].0 && w[0].1 != w[1].1))
    });
    Ok((cells, cost, expansions))
}
