//! Scene documents and their rasterization onto the planning grid.
//!
//! A scene is a rectangular workspace in meters holding obstacle footprints
//! tagged with their BIM family name. Cells are indexed row-major from the
//! origin: cell `(i, j)` has its center at
//! `origin + ((i + 0.5) * res, (j + 0.5) * res)` and flat index `j * cols + i`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Resolution used when a document omits `resolution_m`.
pub const DEFAULT_RESOLUTION: f64 = 0.1;

/// Largest grid a document may describe, in cells.
pub const MAX_CELLS: usize = 1 << 24;

// Absorbs float noise when converting meters to cell counts and indices.
const INDEX_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("malformed scene document: {0}")]
    Malformed(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("{what} ({x}, {y}) lies outside the grid bounds")]
    OutOfBounds { what: String, x: f64, y: f64 },
    #[error("obstacle `{0}` has a degenerate footprint (fewer than 3 vertices)")]
    DegeneratePolygon(String),
    #[error("obstacle `{0}` has a self-intersecting footprint")]
    SelfIntersecting(String),
    #[error("duplicate obstacle id `{0}`")]
    DuplicateId(String),
    #[error("{what} falls on a cell blocked by obstacle `{obstacle}`")]
    BlockedEndpoint { what: String, obstacle: String },
}

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub id: String,
    pub family: String,
    pub footprint: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub grid_width: f64,
    pub grid_height: f64,
    pub resolution: f64,
    pub origin: Point,
    pub obstacles: Vec<Obstacle>,
    pub start: Point,
    pub goal: Point,
    /// Optional per-family prior danger coefficients carried by the document.
    pub priors: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridDoc {
    width_m: f64,
    height_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    resolution_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    origin: Option<Point>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    grid: GridDoc,
    start: Point,
    goal: Point,
    obstacles: Vec<Obstacle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    priors: Option<BTreeMap<String, f64>>,
}

/// Parses and validates a scene document.
pub fn parse_scene(document: &str) -> Result<SceneSpec, SceneError> {
    let doc: SceneDoc =
        serde_json::from_str(document).map_err(|e| SceneError::Malformed(e.to_string()))?;
    let spec = SceneSpec {
        grid_width: doc.grid.width_m,
        grid_height: doc.grid.height_m,
        resolution: doc.grid.resolution_m.unwrap_or(DEFAULT_RESOLUTION),
        origin: doc.grid.origin.unwrap_or([0.0, 0.0]),
        obstacles: doc.obstacles,
        start: doc.start,
        goal: doc.goal,
        priors: doc.priors,
    };
    spec.validate()?;
    Ok(spec)
}

impl SceneSpec {
    pub fn to_json(&self) -> serde_json::Value {
        let doc = SceneDoc {
            grid: GridDoc {
                width_m: self.grid_width,
                height_m: self.grid_height,
                resolution_m: Some(self.resolution),
                origin: Some(self.origin),
            },
            start: self.start,
            goal: self.goal,
            obstacles: self.obstacles.clone(),
            priors: self.priors.clone(),
        };
        serde_json::to_value(doc).expect("scene serializes")
    }

    pub fn cols(&self) -> usize {
        cell_count(self.grid_width, self.resolution)
    }

    pub fn rows(&self) -> usize {
        cell_count(self.grid_height, self.resolution)
    }

    /// Distinct family names in first-seen order.
    pub fn families(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.obstacles
            .iter()
            .filter(|o| seen.insert(o.family.as_str()))
            .map(|o| o.family.clone())
            .collect()
    }

    fn contains(&self, p: Point) -> bool {
        let [ox, oy] = self.origin;
        p[0].is_finite()
            && p[1].is_finite()
            && p[0] >= ox
            && p[0] <= ox + self.grid_width
            && p[1] >= oy
            && p[1] <= oy + self.grid_height
    }

    /// Cell `(i, j)` containing a point; points on the far edge map to the last cell.
    pub fn cell_of(&self, p: Point) -> (usize, usize) {
        let to_index = |v: f64, o: f64, n: usize| {
            let raw = ((v - o) / self.resolution + INDEX_SLACK).floor();
            (raw.max(0.0) as usize).min(n - 1)
        };
        (
            to_index(p[0], self.origin[0], self.cols()),
            to_index(p[1], self.origin[1], self.rows()),
        )
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Point {
        [
            self.origin[0] + (i as f64 + 0.5) * self.resolution,
            self.origin[1] + (j as f64 + 0.5) * self.resolution,
        ]
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for (name, v) in [
            ("width_m", self.grid_width),
            ("height_m", self.grid_height),
            ("resolution_m", self.resolution),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SceneError::InvalidGrid(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.origin[0].is_finite() && self.origin[1].is_finite()) {
            return Err(SceneError::InvalidGrid("origin must be finite".into()));
        }
        let cells = self.cols().saturating_mul(self.rows());
        if cells > MAX_CELLS {
            return Err(SceneError::InvalidGrid(format!("{cells} cells exceeds the limit of {MAX_CELLS}")));
        }
        if let Some(priors) = &self.priors {
            if let Some((family, v)) = priors.iter().find(|(_, v)| !v.is_finite()) {
                return Err(SceneError::Malformed(format!(
                    "prior for `{family}` is not finite ({v})"
                )));
            }
        }
        for (what, p) in [("start", self.start), ("goal", self.goal)] {
            if !self.contains(p) {
                return Err(SceneError::OutOfBounds { what: what.into(), x: p[0], y: p[1] });
            }
        }

        let mut ids = BTreeSet::new();
        for obstacle in &self.obstacles {
            if !ids.insert(obstacle.id.as_str()) {
                return Err(SceneError::DuplicateId(obstacle.id.clone()));
            }
            if obstacle.footprint.len() < 3 {
                return Err(SceneError::DegeneratePolygon(obstacle.id.clone()));
            }
            for &v in &obstacle.footprint {
                if !self.contains(v) {
                    return Err(SceneError::OutOfBounds {
                        what: format!("vertex of obstacle `{}`", obstacle.id),
                        x: v[0],
                        y: v[1],
                    });
                }
            }
            if self_intersects(&obstacle.footprint) {
                return Err(SceneError::SelfIntersecting(obstacle.id.clone()));
            }
        }

        for (what, p) in [("start", self.start), ("goal", self.goal)] {
            let (i, j) = self.cell_of(p);
            let center = self.cell_center(i, j);
            if let Some(obstacle) = self
                .obstacles
                .iter()
                .find(|o| point_in_polygon(center, &o.footprint))
            {
                return Err(SceneError::BlockedEndpoint {
                    what: what.into(),
                    obstacle: obstacle.id.clone(),
                });
            }
        }
        Ok(())
    }
}

fn cell_count(extent: f64, resolution: f64) -> usize {
    ((extent / resolution - INDEX_SLACK).ceil() as usize).max(1)
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(p: Point, a: Point, b: Point) -> bool {
    let scale = (b[0] - a[0]).abs().max((b[1] - a[1]).abs()).max(1.0);
    orient(a, b, p).abs() <= 1e-12 * scale * scale
        && p[0] >= a[0].min(b[0]) - 1e-12
        && p[0] <= a[0].max(b[0]) + 1e-12
        && p[1] >= a[1].min(b[1]) - 1e-12
        && p[1] <= a[1].max(b[1]) + 1e-12
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    on_segment(a, c, d) || on_segment(b, c, d) || on_segment(c, a, b) || on_segment(d, a, b)
}

/// True when two non-adjacent edges of the closed ring touch or cross.
fn self_intersects(ring: &[Point]) -> bool {
    let n = ring.len();
    let edge = |k: usize| (ring[k], ring[(k + 1) % n]);
    for a in 0..n {
        for b in (a + 1)..n {
            let adjacent = b == a + 1 || (a == 0 && b == n - 1);
            if adjacent {
                continue;
            }
            let (p, q) = edge(a);
            let (r, s) = edge(b);
            if segments_intersect(p, q, r, s) {
                return true;
            }
        }
    }
    false
}

/// Even-odd point-in-polygon test; points on the boundary count as inside.
pub fn point_in_polygon(p: Point, ring: &[Point]) -> bool {
    let n = ring.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if on_segment(p, a, b) {
            return true;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x_cross = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Cells covered by one obstacle (the collision set of its footprint).
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleCells {
    pub family: String,
    /// Sorted, deduplicated flat cell indices.
    pub cells: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub cols: usize,
    pub rows: usize,
    pub resolution: f64,
    /// Keyed by obstacle id; iteration order is ascending id.
    pub obstacles: BTreeMap<String, ObstacleCells>,
    blocked: Vec<bool>,
}

impl OccupancyGrid {
    /// Builds a grid from explicit per-obstacle cell sets.
    ///
    /// Panics if a cell index is out of range.
    pub fn from_cells(
        cols: usize,
        rows: usize,
        resolution: f64,
        obstacles: BTreeMap<String, ObstacleCells>,
    ) -> Self {
        let mut blocked = vec![false; cols * rows];
        let obstacles = obstacles
            .into_iter()
            .map(|(id, mut o)| {
                o.cells.sort_unstable();
                o.cells.dedup();
                for &c in &o.cells {
                    assert!(c < cols * rows, "cell {c} out of range for obstacle `{id}`");
                    blocked[c] = true;
                }
                (id, o)
            })
            .collect();
        OccupancyGrid { cols, rows, resolution, obstacles, blocked }
    }

    pub fn len(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.cols + i
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.cols, idx / self.cols)
    }

    pub fn is_blocked(&self, idx: usize) -> bool {
        self.blocked[idx]
    }

    pub fn blocked_cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.blocked.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn blocked_count(&self) -> usize {
        self.blocked.iter().filter(|&&b| b).count()
    }

    /// Families present on the grid, sorted.
    pub fn families(&self) -> BTreeSet<&str> {
        self.obstacles.values().map(|o| o.family.as_str()).collect()
    }
}

/// Marks every cell whose center lies inside (or on) an obstacle footprint.
pub fn rasterize(spec: &SceneSpec) -> OccupancyGrid {
    let cols = spec.cols();
    let rows = spec.rows();
    let res = spec.resolution;
    let mut obstacles = BTreeMap::new();
    for obstacle in &spec.obstacles {
        let (min, max) = bounding_box(&obstacle.footprint);
        let lo = spec.cell_of(min);
        let hi = spec.cell_of(max);
        // One cell of margin on each side covers centers sitting exactly on the box edge.
        let i_range = lo.0.saturating_sub(1)..=(hi.0 + 1).min(cols - 1);
        let j_range = lo.1.saturating_sub(1)..=(hi.1 + 1).min(rows - 1);
        let mut cells = Vec::new();
        for j in j_range {
            for i in i_range.clone() {
                if point_in_polygon(spec.cell_center(i, j), &obstacle.footprint) {
                    cells.push(j * cols + i);
                }
            }
        }
        obstacles.insert(
            obstacle.id.clone(),
            ObstacleCells { family: obstacle.family.clone(), cells },
        );
    }
    OccupancyGrid::from_cells(cols, rows, res, obstacles)
}

fn bounding_box(ring: &[Point]) -> (Point, Point) {
    ring.iter().fold(
        ([f64::INFINITY, f64::INFINITY], [f64::NEG_INFINITY, f64::NEG_INFINITY]),
        |(lo, hi), p| ([lo[0].min(p[0]), lo[1].min(p[1])], [hi[0].max(p[0]), hi[1].max(p[1])]),
    )
}
