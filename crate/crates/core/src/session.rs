//! A live planning session: scene, coefficients, current field and path history.
//!
//! Mutations are all-or-nothing. Each one computes its new state on the side
//! and swaps it in only once every step has succeeded.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bayes::{init_priors, CoefficientStore, DEFAULT_K_GLOBAL};
use crate::field::{build_field, CoefficientMode, PotentialGrid, DEFAULT_D_MAX};
use crate::metrics::min_dist_to_obstacles;
use crate::planner::{astar_baseline, mha_star, PathResult, PlannerParams};
use crate::scene::{parse_scene, rasterize, OccupancyGrid, SceneSpec};
use crate::sentiment::{analyze, SentimentProvider};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldSettings {
    pub k_global: f64,
    pub d_max: f64,
    pub mode: CoefficientMode,
}

impl Default for FieldSettings {
    fn default() -> Self {
        FieldSettings { k_global: DEFAULT_K_GLOBAL, d_max: DEFAULT_D_MAX, mode: CoefficientMode::ScaleKrep }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Baseline,
    #[default]
    Mha,
}

/// Priors for a scene: the document's own `priors` if present, otherwise
/// whatever the provider suggests for the scene's families.
pub fn scene_priors(spec: &SceneSpec, provider: &dyn SentimentProvider) -> Result<CoefficientStore, Error> {
    let families = spec.families();
    let assignments = match &spec.priors {
        Some(p) => p.clone(),
        None => provider.initial_priors(&families)?,
    };
    Ok(init_priors(&families, &assignments)?)
}

pub fn field_for(
    grid: &OccupancyGrid,
    store: &CoefficientStore,
    settings: &FieldSettings,
) -> Result<PotentialGrid, Error> {
    let params = store.to_field_params(grid, settings.k_global, settings.d_max, settings.mode)?;
    Ok(build_field(grid, &params)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptOutcome {
    pub likelihoods: BTreeMap<String, f64>,
    pub posteriors_before: BTreeMap<String, f64>,
    pub posteriors: BTreeMap<String, f64>,
    pub field_version: u64,
    pub provider: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanOutcome {
    #[serde(flatten)]
    pub path: PathResult,
    pub expansions: usize,
    pub mdo_m: Option<f64>,
    pub field_version: u64,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    scene: SceneSpec,
    grid: OccupancyGrid,
    store: CoefficientStore,
    field: PotentialGrid,
    field_version: u64,
    history: Vec<PathResult>,
    settings: FieldSettings,
}

impl Session {
    pub fn new(
        id: impl Into<String>,
        scene: SceneSpec,
        store: CoefficientStore,
        settings: FieldSettings,
    ) -> Result<Session, Error> {
        let grid = rasterize(&scene);
        let field = field_for(&grid, &store, &settings)?;
        Ok(Session {
            id: id.into(),
            scene,
            grid,
            store,
            field,
            field_version: 1,
            history: Vec::new(),
            settings,
        })
    }

    pub fn scene(&self) -> &SceneSpec {
        &self.scene
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    pub fn store(&self) -> &CoefficientStore {
        &self.store
    }

    pub fn field(&self) -> &PotentialGrid {
        &self.field
    }

    pub fn field_version(&self) -> u64 {
        self.field_version
    }

    pub fn history(&self) -> &[PathResult] {
        &self.history
    }

    pub fn settings(&self) -> &FieldSettings {
        &self.settings
    }

    /// Scores a prompt, folds it into the coefficients and recomputes the field.
    pub fn apply_prompt(
        &mut self,
        text: &str,
        provider: &dyn SentimentProvider,
        timestamp: u64,
    ) -> Result<PromptOutcome, Error> {
        let families = self.store.family_names();
        let assignment = analyze(provider, text, &families, &self.store)?;
        let store = self.store.update(&assignment.likelihoods, text, &assignment.provider, timestamp)?;
        let field = field_for(&self.grid, &store, &self.settings)?;

        let before = self.store.posteriors();
        self.store = store;
        self.field = field;
        self.field_version += 1;
        Ok(PromptOutcome {
            likelihoods: assignment.likelihoods,
            posteriors_before: before,
            posteriors: self.store.posteriors(),
            field_version: self.field_version,
            provider: assignment.provider,
        })
    }

    pub fn plan(&mut self, strategy: Strategy, params: &PlannerParams) -> Result<PlanOutcome, Error> {
        let start = self.scene.cell_of(self.scene.start);
        let goal = self.scene.cell_of(self.scene.goal);
        let path = match strategy {
            Strategy::Baseline => astar_baseline(&self.grid, start, goal)?,
            Strategy::Mha => mha_star(&self.grid, &self.field, start, goal, params)?,
        };
        let mdo_m = min_dist_to_obstacles(&path, &self.grid);
        self.history.push(path.clone());
        Ok(PlanOutcome { expansions: path.expansions, path, mdo_m, field_version: self.field_version })
    }

    /// Back to the priors with an empty evidence log.
    pub fn reset(&mut self) -> Result<(), Error> {
        let store = self.store.reset();
        let field = field_for(&self.grid, &store, &self.settings)?;
        self.store = store;
        self.field = field;
        self.field_version += 1;
        self.history.clear();
        Ok(())
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            id: self.id.clone(),
            scene: self.scene.to_json(),
            coefficients: serde_json::from_str(&self.store.to_json()).expect("store is JSON"),
            settings: self.settings,
            field_version: self.field_version,
            history: self.history.clone(),
        }
    }

    /// Rebuilds a session; posteriors and field are recomputed from the log.
    pub fn restore(snapshot: &SessionSnapshot) -> Result<Session, Error> {
        let scene = parse_scene(&snapshot.scene.to_string())?;
        let store = CoefficientStore::from_json(&snapshot.coefficients.to_string())?;
        let mut session = Session::new(snapshot.id.clone(), scene, store, snapshot.settings)?;
        session.field_version = snapshot.field_version;
        session.history = snapshot.history.clone();
        Ok(session)
    }

    /// SHA-256 over the canonical snapshot plus the field values.
    pub fn state_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&self.snapshot()).expect("snapshot serializes"));
        for v in &self.field.values {
            hasher.update(v.to_le_bytes());
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub id: String,
    pub scene: serde_json::Value,
    pub coefficients: serde_json::Value,
    pub settings: FieldSettings,
    pub field_version: u64,
    pub history: Vec<PathResult>,
}
