//! Per-family danger coefficients consolidated by sequential Bayesian updates.
//!
//! Each family carries a binary hypothesis H ("its surroundings are
//! hazardous") with prior P(H). A prompt contributes a likelihood P(E|H) and
//! the complement model P(E|¬H) = 1 − P(E|H), so a single update is
//!
//! ```text
//! P(H|E) = L·p / (L·p + (1−L)·(1−p))
//! ```
//!
//! and, with conditionally independent evidence, a chain multiplies the
//! prior odds by each likelihood ratio L/(1−L). Posteriors are always
//! recomputed from the prior and the full evidence log, so replaying a log
//! reproduces the stored values bit for bit and the result does not depend
//! on evidence order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{CoefficientMode, FieldParams, ObstacleCoefficients};
use crate::scene::OccupancyGrid;

/// Clamp applied to priors, likelihoods and posteriors.
pub const EPSILON: f64 = 1e-6;

/// Field strength of a family whose posterior is 1.
pub const DEFAULT_K_GLOBAL: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum BayesError {
    #[error("no value supplied for family `{0}`")]
    MissingFamily(String),
    #[error("value for family `{family}` is not finite ({value})")]
    NonFinite { family: String, value: f64 },
    #[error("obstacle `{obstacle}` has family `{family}` which has no coefficient")]
    UnknownFamily { obstacle: String, family: String },
    #[error("invalid field scaling: {0}")]
    InvalidScale(String),
    #[error("malformed coefficient document: {0}")]
    Malformed(String),
}

pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(EPSILON, 1.0 - EPSILON)
}

fn checked(family: &str, value: f64) -> Result<f64, BayesError> {
    if value.is_finite() {
        Ok(clamp_probability(value))
    } else {
        Err(BayesError::NonFinite { family: family.to_string(), value })
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Posterior of a prior under a chain of conditionally independent
/// likelihoods. Neutral evidence (exactly 0.5) is skipped, terms are summed
/// in ascending order, and the result is clamped to `[ε, 1−ε]`.
pub fn posterior_from_chain(prior: f64, likelihoods: &[f64]) -> f64 {
    let prior = clamp_probability(prior);
    let mut informative: Vec<f64> = likelihoods
        .iter()
        .map(|&l| clamp_probability(l))
        .filter(|&l| l != 0.5)
        .collect();
    if informative.is_empty() {
        return prior;
    }
    informative.sort_by(f64::total_cmp);
    let log_odds = informative.iter().fold(logit(prior), |acc, &l| acc + logit(l));
    clamp_probability(1.0 / (1.0 + (-log_odds).exp()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceRecord {
    pub prompt: String,
    pub likelihoods: BTreeMap<String, f64>,
    pub provider: String,
    /// Unix seconds; in-memory only.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyCoefficient {
    pub prior: f64,
    pub posterior: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoefficientStore {
    families: BTreeMap<String, FamilyCoefficient>,
    evidence: Vec<EvidenceRecord>,
}

/// Seeds a store from per-family prior assignments.
pub fn init_priors<S: AsRef<str>>(
    families: &[S],
    assignments: &BTreeMap<String, f64>,
) -> Result<CoefficientStore, BayesError> {
    let mut store = CoefficientStore::default();
    for family in families {
        let family = family.as_ref();
        let value = *assignments
            .get(family)
            .ok_or_else(|| BayesError::MissingFamily(family.to_string()))?;
        let prior = checked(family, value)?;
        store
            .families
            .insert(family.to_string(), FamilyCoefficient { prior, posterior: prior });
    }
    Ok(store)
}

impl CoefficientStore {
    pub fn families(&self) -> impl Iterator<Item = &str> {
        self.families.keys().map(String::as_str)
    }

    pub fn family_names(&self) -> Vec<String> {
        self.families.keys().cloned().collect()
    }

    pub fn contains(&self, family: &str) -> bool {
        self.families.contains_key(family)
    }

    pub fn prior(&self, family: &str) -> Option<f64> {
        self.families.get(family).map(|f| f.prior)
    }

    pub fn posterior(&self, family: &str) -> Option<f64> {
        self.families.get(family).map(|f| f.posterior)
    }

    pub fn posteriors(&self) -> BTreeMap<String, f64> {
        self.families.iter().map(|(k, v)| (k.clone(), v.posterior)).collect()
    }

    pub fn priors(&self) -> BTreeMap<String, f64> {
        self.families.iter().map(|(k, v)| (k.clone(), v.prior)).collect()
    }

    pub fn evidence(&self) -> &[EvidenceRecord] {
        &self.evidence
    }

    /// The same priors with an empty evidence log.
    pub fn reset(&self) -> CoefficientStore {
        CoefficientStore {
            families: self
                .families
                .iter()
                .map(|(k, v)| (k.clone(), FamilyCoefficient { prior: v.prior, posterior: v.prior }))
                .collect(),
            evidence: Vec::new(),
        }
    }

    /// Applies one piece of evidence. Every family in the store must be covered.
    pub fn update(
        &self,
        likelihoods: &BTreeMap<String, f64>,
        prompt: &str,
        provider: &str,
        timestamp: u64,
    ) -> Result<CoefficientStore, BayesError> {
        let mut clamped = BTreeMap::new();
        for family in self.families.keys() {
            let value = *likelihoods
                .get(family)
                .ok_or_else(|| BayesError::MissingFamily(family.clone()))?;
            clamped.insert(family.clone(), checked(family, value)?);
        }
        let mut next = self.clone();
        next.evidence.push(EvidenceRecord {
            prompt: prompt.to_string(),
            likelihoods: clamped,
            provider: provider.to_string(),
            timestamp,
        });
        next.recompute();
        Ok(next)
    }

    /// Folds a chain of likelihood maps, validating all of them before applying any.
    pub fn update_sequence(
        &self,
        chain: &[BTreeMap<String, f64>],
    ) -> Result<CoefficientStore, BayesError> {
        let mut next = self.clone();
        for likelihoods in chain {
            next = next.update(likelihoods, "", "sequence", 0)?;
        }
        Ok(next)
    }

    fn recompute(&mut self) {
        for (family, coeff) in self.families.iter_mut() {
            let chain: Vec<f64> = self
                .evidence
                .iter()
                .filter_map(|e| e.likelihoods.get(family).copied())
                .collect();
            coeff.posterior = posterior_from_chain(coeff.prior, &chain);
        }
    }

    /// Rebuilds the store from its priors and evidence log.
    pub fn replay(&self) -> CoefficientStore {
        let mut fresh = self.clone();
        fresh.recompute();
        fresh
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_doc()).expect("store serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("store serializes")
    }

    fn to_doc(&self) -> StoreDoc {
        let families = self
            .families
            .iter()
            .map(|(name, c)| {
                let evidence = self
                    .evidence
                    .iter()
                    .map(|e| EvidenceDoc {
                        prompt: e.prompt.clone(),
                        likelihoods: e
                            .likelihoods
                            .get(name)
                            .map(|&l| BTreeMap::from([(name.clone(), l)]))
                            .unwrap_or_default(),
                        provider: e.provider.clone(),
                    })
                    .collect();
                (name.clone(), FamilyDoc { prior: c.prior, posterior: c.posterior, evidence })
            })
            .collect();
        StoreDoc { families }
    }

    /// Imports a store document. Evidence entries are merged across families
    /// by position, and the stored posteriors must match a replay of the log.
    pub fn from_json(text: &str) -> Result<CoefficientStore, BayesError> {
        let doc: StoreDoc =
            serde_json::from_str(text).map_err(|e| BayesError::Malformed(e.to_string()))?;
        let mut families = BTreeMap::new();
        let mut evidence: Vec<EvidenceRecord> = Vec::new();
        let mut first = true;
        for (name, fam) in &doc.families {
            let prior = checked(name, fam.prior)?;
            let posterior = checked(name, fam.posterior)?;
            if first {
                evidence = fam
                    .evidence
                    .iter()
                    .map(|e| EvidenceRecord {
                        prompt: e.prompt.clone(),
                        likelihoods: BTreeMap::new(),
                        provider: e.provider.clone(),
                        timestamp: 0,
                    })
                    .collect();
                first = false;
            } else if fam.evidence.len() != evidence.len() {
                return Err(BayesError::Malformed(format!(
                    "family `{name}` has {} evidence entries, expected {}",
                    fam.evidence.len(),
                    evidence.len()
                )));
            }
            for (k, (record, entry)) in evidence.iter_mut().zip(&fam.evidence).enumerate() {
                if record.prompt != entry.prompt || record.provider != entry.provider {
                    return Err(BayesError::Malformed(format!(
                        "evidence entry {k} of family `{name}` disagrees with other families"
                    )));
                }
                let value = *entry.likelihoods.get(name).ok_or_else(|| {
                    BayesError::Malformed(format!(
                        "evidence entry {k} of family `{name}` has no likelihood for it"
                    ))
                })?;
                record.likelihoods.insert(name.clone(), checked(name, value)?);
            }
            families.insert(name.clone(), FamilyCoefficient { prior, posterior });
        }
        let stored = CoefficientStore { families, evidence };
        let replayed = stored.replay();
        if let Some((name, _)) = stored
            .families
            .iter()
            .find(|(name, c)| replayed.families[*name].posterior != c.posterior)
        {
            return Err(BayesError::Malformed(format!(
                "posterior of `{name}` does not match its evidence log"
            )));
        }
        Ok(stored)
    }

    /// Maps posteriors onto per-obstacle field coefficients.
    ///
    /// `ScaleKrep`: `k_rep = posterior · k_global`, `d_max` fixed.
    /// `ScaleDmax`: `k_rep = k_global`, `d_max = posterior · d_max`.
    pub fn to_field_params(
        &self,
        grid: &OccupancyGrid,
        k_global: f64,
        d_max: f64,
        mode: CoefficientMode,
    ) -> Result<FieldParams, BayesError> {
        if !(k_global.is_finite() && k_global >= 0.0) {
            return Err(BayesError::InvalidScale(format!("k_global must be >= 0, got {k_global}")));
        }
        if !(d_max.is_finite() && d_max > 0.0) {
            return Err(BayesError::InvalidScale(format!("d_max must be > 0, got {d_max}")));
        }
        let mut obstacles = BTreeMap::new();
        for (id, obstacle) in &grid.obstacles {
            let posterior = self.posterior(&obstacle.family).ok_or_else(|| {
                BayesError::UnknownFamily { obstacle: id.clone(), family: obstacle.family.clone() }
            })?;
            let coeff = match mode {
                CoefficientMode::ScaleKrep => {
                    ObstacleCoefficients { k_rep: posterior * k_global, d_max }
                }
                CoefficientMode::ScaleDmax => {
                    ObstacleCoefficients { k_rep: k_global, d_max: posterior * d_max }
                }
            };
            obstacles.insert(id.clone(), coeff);
        }
        Ok(FieldParams { obstacles, mode })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoreDoc {
    families: BTreeMap<String, FamilyDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilyDoc {
    prior: f64,
    posterior: f64,
    #[serde(default)]
    evidence: Vec<EvidenceDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvidenceDoc {
    prompt: String,
    likelihoods: BTreeMap<String, f64>,
    provider: String,
}

/// Danger priors per family as listed in the original safe-scenario study.
pub fn reference_priors() -> BTreeMap<String, f64> {
    [("Wall", 0.2), ("Grinder", 0.8), ("Chainsaw", 0.95), ("Robot", 0.9), ("Chair", 0.6)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}
