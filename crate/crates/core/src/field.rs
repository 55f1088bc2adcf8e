//! Exponential repulsive potential over the occupancy grid.
//!
//! Every obstacle emits `k_rep * exp(-d)` (d in meters, measured between cell
//! centers) up to its cutoff distance; the per-cell value is the sum over
//! obstacles taken in ascending id order.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::OccupancyGrid;

pub const DEFAULT_D_MAX: f64 = 5.0;

/// Field value rendered as pure red in heatmaps.
pub const HEATMAP_MAX: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum FieldError {
    #[error("no coefficient supplied for obstacle `{0}`")]
    MissingCoefficient(String),
    #[error("invalid coefficient for obstacle `{id}`: {reason}")]
    InvalidCoefficient { id: String, reason: String },
    #[error("malformed field document: {0}")]
    Malformed(String),
    #[error("potential overflows at cell {0}; lower k_rep")]
    Overflow(usize),
}

/// Which field term the danger posterior scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientMode {
    #[default]
    ScaleKrep,
    ScaleDmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleCoefficients {
    pub k_rep: f64,
    pub d_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldParams {
    pub obstacles: BTreeMap<String, ObstacleCoefficients>,
    pub mode: CoefficientMode,
}

impl FieldParams {
    /// Same `k_rep` and `d_max` for every obstacle on the grid.
    pub fn uniform(grid: &OccupancyGrid, k_rep: f64, d_max: f64) -> Self {
        FieldParams {
            obstacles: grid
                .obstacles
                .keys()
                .map(|id| (id.clone(), ObstacleCoefficients { k_rep, d_max }))
                .collect(),
            mode: CoefficientMode::ScaleKrep,
        }
    }

    fn coefficients(&self, id: &str) -> Result<ObstacleCoefficients, FieldError> {
        let c = *self
            .obstacles
            .get(id)
            .ok_or_else(|| FieldError::MissingCoefficient(id.to_string()))?;
        if !(c.k_rep.is_finite() && c.k_rep >= 0.0) {
            return Err(FieldError::InvalidCoefficient {
                id: id.into(),
                reason: format!("k_rep must be finite and >= 0, got {}", c.k_rep),
            });
        }
        if !(c.d_max.is_finite() && c.d_max > 0.0) {
            return Err(FieldError::InvalidCoefficient {
                id: id.into(),
                reason: format!("d_max must be finite and > 0, got {}", c.d_max),
            });
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialGrid {
    pub cols: usize,
    pub rows: usize,
    #[serde(rename = "resolution_m")]
    pub resolution: f64,
    /// Row-major, `values[j * cols + i]`.
    pub values: Vec<f64>,
}

impl PotentialGrid {
    pub fn zeros(cols: usize, rows: usize, resolution: f64) -> Self {
        PotentialGrid { cols, rows, resolution, values: vec![0.0; cols * rows] }
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("field serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, FieldError> {
        let field: PotentialGrid =
            serde_json::from_str(text).map_err(|e| FieldError::Malformed(e.to_string()))?;
        let expected = field.cols.checked_mul(field.rows);
        if expected != Some(field.values.len()) {
            return Err(FieldError::Malformed(format!(
                "{}x{} grid does not match {} values",
                field.cols,
                field.rows,
                field.values.len()
            )));
        }
        if !(field.resolution.is_finite() && field.resolution > 0.0) {
            return Err(FieldError::Malformed("resolution_m must be positive".into()));
        }
        if field.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(FieldError::Malformed("values must be finite and >= 0".into()));
        }
        Ok(field)
    }

    /// Binary PPM (P6). The top image row is the highest grid row.
    pub fn write_ppm<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.cols, self.rows)?;
        let mut buf = Vec::with_capacity(self.cols * self.rows * 3);
        for j in (0..self.rows).rev() {
            for i in 0..self.cols {
                buf.extend_from_slice(&heat_color(self.values[j * self.cols + i]));
            }
        }
        out.write_all(&buf)
    }
}

/// Linear blue (0) to red (>= 5) color map.
pub fn heat_color(value: f64) -> [u8; 3] {
    let t = (value / HEATMAP_MAX).clamp(0.0, 1.0);
    let red = (t * 255.0).round() as u8;
    [red, 0, 255 - red]
}

/// `k_rep * exp(-distance)` inside the cutoff, zero beyond it.
pub fn repulsive_potential(distance: f64, k_rep: f64, d_max: f64) -> f64 {
    if distance < d_max {
        k_rep * (-distance).exp()
    } else {
        0.0
    }
}

fn center_distance(grid: &OccupancyGrid, a: usize, b: usize) -> f64 {
    let (ai, aj) = grid.coords(a);
    let (bi, bj) = grid.coords(b);
    let di = ai.abs_diff(bi) as f64;
    let dj = aj.abs_diff(bj) as f64;
    (di * di + dj * dj).sqrt() * grid.resolution
}

/// Exhaustive minimum center-to-center distance from `cell` to any cell of
/// `obstacle_cells`; `None` when the set is empty.
pub fn distance_to_obstacle(
    grid: &OccupancyGrid,
    cell: usize,
    obstacle_cells: &[usize],
) -> Option<f64> {
    obstacle_cells
        .iter()
        .map(|&c| center_distance(grid, cell, c))
        .min_by(f64::total_cmp)
}

/// Distance from `cell` to the nearest blocked cell; `None` on an obstacle-free grid.
pub fn min_distance_any(grid: &OccupancyGrid, cell: usize) -> Option<f64> {
    grid.blocked_cells()
        .map(|c| center_distance(grid, cell, c))
        .min_by(f64::total_cmp)
}

/// Cumulative potential of every obstacle on every cell.
pub fn build_field(grid: &OccupancyGrid, params: &FieldParams) -> Result<PotentialGrid, FieldError> {
    let mut field = PotentialGrid::zeros(grid.cols, grid.rows, grid.resolution);
    for (id, obstacle) in &grid.obstacles {
        let coeff = params.coefficients(id)?;
        if obstacle.cells.is_empty() || coeff.k_rep == 0.0 {
            continue;
        }
        accumulate_obstacle(grid, &obstacle.cells, coeff, &mut field.values);
    }
    if let Some(idx) = field.values.iter().position(|v| !v.is_finite()) {
        return Err(FieldError::Overflow(idx));
    }
    Ok(field)
}

/// Adds one obstacle's potential using an exact Euclidean distance transform
/// restricted to the window where the potential can be non-zero.
fn accumulate_obstacle(
    grid: &OccupancyGrid,
    cells: &[usize],
    coeff: ObstacleCoefficients,
    values: &mut [f64],
) {
    let (mut i0, mut j0, mut i1, mut j1) = (usize::MAX, usize::MAX, 0, 0);
    for &c in cells {
        let (i, j) = grid.coords(c);
        i0 = i0.min(i);
        j0 = j0.min(j);
        i1 = i1.max(i);
        j1 = j1.max(j);
    }
    // The cast saturates for huge d_max; the window then covers the grid.
    let reach = ((coeff.d_max / grid.resolution).ceil() as usize).saturating_add(1);
    let (wi0, wj0) = (i0.saturating_sub(reach), j0.saturating_sub(reach));
    let wi1 = i1.saturating_add(reach).min(grid.cols - 1);
    let wj1 = j1.saturating_add(reach).min(grid.rows - 1);
    let w = wi1 - wi0 + 1;
    let h = wj1 - wj0 + 1;

    let mut sq = vec![INF; w * h];
    for &c in cells {
        let (i, j) = grid.coords(c);
        sq[(j - wj0) * w + (i - wi0)] = 0.0;
    }
    squared_edt(&mut sq, w, h);

    for wj in 0..h {
        for wi in 0..w {
            let d2 = sq[wj * w + wi];
            if d2 >= INF {
                continue;
            }
            let d = d2.sqrt() * grid.resolution;
            let idx = (wj + wj0) * grid.cols + (wi + wi0);
            values[idx] += repulsive_potential(d, coeff.k_rep, coeff.d_max);
        }
    }
}

const INF: f64 = 1e30;

/// In-place squared Euclidean distance transform (Felzenszwalb-Huttenlocher),
/// in cell units. Seeds are 0, everything else `INF`. Distances between cell
/// centers are integers here, so the result is exact.
fn squared_edt(data: &mut [f64], w: usize, h: usize) {
    let n = w.max(h);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];

    for i in 0..w {
        for j in 0..h {
            f[j] = data[j * w + i];
        }
        edt_1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for j in 0..h {
            data[j * w + i] = out[j];
        }
    }
    for j in 0..h {
        f[..w].copy_from_slice(&data[j * w..(j + 1) * w]);
        edt_1d(&f[..w], &mut out[..w], &mut v, &mut z);
        data[j * w..(j + 1) * w].copy_from_slice(&out[..w]);
    }
}

fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    // Skip rows without any finite sample; the envelope would be meaningless.
    if f.iter().all(|&x| x >= INF) {
        out.copy_from_slice(f);
        return;
    }
    let mut k = 0usize;
    let first = f.iter().position(|&x| x < INF).unwrap();
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in (first + 1)..n {
        if f[q] >= INF {
            continue;
        }
        let qf = q as f64;
        loop {
            let p = v[k];
            let pf = p as f64;
            let s = ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf);
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, slot) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let p = v[k];
        let d = qf - p as f64;
        *slot = d * d + f[p];
    }
}
