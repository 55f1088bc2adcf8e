//! Path metrics and the baseline / safe / dangerous scenario comparison.

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;
use std::fmt;

use serde::Serialize;
use thiserror::Error as ThisError;

use crate::bayes::{CoefficientStore, DEFAULT_K_GLOBAL};
use crate::field::{build_field, min_distance_any, CoefficientMode, DEFAULT_D_MAX};
use crate::planner::{astar_baseline, mha_star, Cell, CostMode, PathResult, PlannerParams};
use crate::scene::{rasterize, OccupancyGrid, SceneSpec};
use crate::sentiment::{analyze, SentimentProvider};
use crate::Error;

/// Sum of step lengths: `res` per orthogonal step, `√2·res` per diagonal step.
pub fn path_length(cells: &[Cell], resolution: f64) -> f64 {
    let (mut orthogonal, mut diagonal) = (0u32, 0u32);
    for pair in cells.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a.0 != b.0 && a.1 != b.1 {
            diagonal += 1;
        } else if a != b {
            orthogonal += 1;
        }
    }
    (orthogonal as f64 + diagonal as f64 * SQRT_2) * resolution
}

/// Minimum distance from any path cell center to any blocked cell center.
/// `None` when the grid has no obstacles.
pub fn min_dist_to_obstacles(path: &PathResult, grid: &OccupancyGrid) -> Option<f64> {
    path.cells
        .iter()
        .filter_map(|&(i, j)| min_distance_any(grid, grid.index(i, j)))
        .min_by(f64::total_cmp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPrompts {
    pub safe: String,
    pub dangerous: String,
}

impl Default for ScenarioPrompts {
    fn default() -> Self {
        ScenarioPrompts {
            safe: "The environment is incredibly safe".into(),
            dangerous: "The environment is incredibly dangerous".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub planner: PlannerParams,
    pub k_global: f64,
    pub d_max: f64,
    pub coefficient_mode: CoefficientMode,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            planner: PlannerParams { cost_mode: CostMode::CostAugmented, ..PlannerParams::default() },
            k_global: DEFAULT_K_GLOBAL,
            d_max: DEFAULT_D_MAX,
            coefficient_mode: CoefficientMode::ScaleKrep,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioRow {
    pub name: String,
    pub prompt: Option<String>,
    pub planner: String,
    pub path_length_m: f64,
    pub mdo_m: Option<f64>,
    pub cost: f64,
    pub expansions: usize,
    pub posteriors: BTreeMap<String, f64>,
    pub path: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub config: ScenarioConfig,
    pub rows: Vec<ScenarioRow>,
}

impl ScenarioReport {
    pub fn row(&self, name: &str) -> Option<&ScenarioRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for ScenarioReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10}  {:>14}  {:>7}  {:>10}", "Strategy", "Path Length(m)", "MDO(m)", "Expansions")?;
        for row in &self.rows {
            let mdo = row.mdo_m.map_or_else(|| "-".to_string(), |m| format!("{m:.2}"));
            writeln!(
                f,
                "{:<10}  {:>14.3}  {:>7}  {:>10}",
                row.name, row.path_length_m, mdo, row.expansions
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, ThisError)]
#[error("scenario `{row}`: {source}")]
pub struct ScenarioError {
    pub row: String,
    #[source]
    pub source: Error,
}

fn row_from(
    name: &str,
    prompt: Option<&str>,
    path: PathResult,
    grid: &OccupancyGrid,
    store: &CoefficientStore,
) -> ScenarioRow {
    ScenarioRow {
        name: name.into(),
        prompt: prompt.map(str::to_string),
        planner: path.planner.clone(),
        path_length_m: path.length_m,
        mdo_m: min_dist_to_obstacles(&path, grid),
        cost: path.cost,
        expansions: path.expansions,
        posteriors: store.posteriors(),
        path: path.cells,
    }
}

/// Plans one prompt-steered row from fresh priors.
pub fn plan_with_prompt(
    spec: &SceneSpec,
    grid: &OccupancyGrid,
    priors: &CoefficientStore,
    prompt: &str,
    provider: &dyn SentimentProvider,
    config: &ScenarioConfig,
) -> Result<(PathResult, CoefficientStore), Error> {
    let families = priors.family_names();
    let assignment = analyze(provider, prompt, &families, priors)?;
    let store = priors.update(&assignment.likelihoods, prompt, &assignment.provider, 0)?;
    let params = store.to_field_params(grid, config.k_global, config.d_max, config.coefficient_mode)?;
    let field = build_field(grid, &params)?;
    let path = mha_star(grid, &field, spec.cell_of(spec.start), spec.cell_of(spec.goal), &config.planner)?;
    Ok((path, store))
}

/// Baseline A*, then MHA* after the safe prompt and after the dangerous
/// prompt, each starting from the same priors.
pub fn compare_scenarios(
    spec: &SceneSpec,
    priors: &CoefficientStore,
    prompts: &ScenarioPrompts,
    provider: &dyn SentimentProvider,
    config: &ScenarioConfig,
) -> Result<ScenarioReport, ScenarioError> {
    let grid = rasterize(spec);
    let start = spec.cell_of(spec.start);
    let goal = spec.cell_of(spec.goal);
    let tag = |row: &str| {
        let row = row.to_string();
        move |e: Error| ScenarioError { row, source: e }
    };

    let baseline = astar_baseline(&grid, start, goal).map_err(|e| tag("Baseline")(e.into()))?;
    let mut rows = vec![row_from("Baseline", None, baseline, &grid, priors)];
    for (name, prompt) in [("Safe", &prompts.safe), ("Dangerous", &prompts.dangerous)] {
        let (path, store) =
            plan_with_prompt(spec, &grid, priors, prompt, provider, config).map_err(tag(name))?;
        rows.push(row_from(name, Some(prompt), path, &grid, &store));
    }
    Ok(ScenarioReport { config: *config, rows })
}
