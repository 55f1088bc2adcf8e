//! Prompt-steered grid navigation.
//!
//! Obstacles tagged with BIM family names emit an exponential repulsive
//! potential whose strength follows a per-family danger coefficient. Natural
//! language prompts are scored into likelihoods, consolidated into those
//! coefficients with Bayesian updates, and the resulting field steers a
//! multi-heuristic A* planner away from the families the operator flagged.
//!
//! ```
//! use promptnav_core::{bayes, field, planner, scene, sentiment};
//!
//! let doc = r#"{"grid": {"width_m": 3, "height_m": 2, "resolution_m": 0.1, "origin": [0, 0]},
//!               "start": [0.2, 1.0], "goal": [2.8, 1.0],
//!               "obstacles": [{"id": "g1", "family": "Grinder",
//!                              "footprint": [[1.3, 0.6], [1.7, 0.6], [1.7, 1.4], [1.3, 1.4]]}]}"#;
//! let spec = scene::parse_scene(doc).unwrap();
//! let grid = scene::rasterize(&spec);
//! let priors = bayes::init_priors(&spec.families(), &bayes::reference_priors()).unwrap();
//! let provider = sentiment::LexiconProvider::default();
//! let evidence = sentiment::analyze(&provider, "be careful", &spec.families(), &priors).unwrap();
//! let store = priors.update(&evidence.likelihoods, "be careful", "lexicon", 0).unwrap();
//! let params = store
//!     .to_field_params(&grid, 5.0, 5.0, field::CoefficientMode::ScaleKrep)
//!     .unwrap();
//! let potential = field::build_field(&grid, &params).unwrap();
//! let path = planner::mha_star(
//!     &grid,
//!     &potential,
//!     spec.cell_of(spec.start),
//!     spec.cell_of(spec.goal),
//!     &planner::PlannerParams::default(),
//! )
//! .unwrap();
//! assert_eq!(path.cells.first(), Some(&spec.cell_of(spec.start)));
//! ```

pub mod bayes;
pub mod field;
pub mod metrics;
pub mod planner;
pub mod scene;
pub mod sentiment;
pub mod session;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Scene(#[from] scene::SceneError),
    #[error(transparent)]
    Field(#[from] field::FieldError),
    #[error(transparent)]
    Bayes(#[from] bayes::BayesError),
    #[error(transparent)]
    Sentiment(#[from] sentiment::SentimentError),
    #[error(transparent)]
    Plan(#[from] planner::PlanError),
    #[error("session: {0}")]
    Session(String),
}
