use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CvrDefinition, HarnessError};
use crate::agent::{FatigueConfig, PolicyKind, RuleConfig};
use crate::catalog::UserId;
use crate::recsys::{ExternalLists, FmConfig, RecommenderKind, RecommenderSpec};
use crate::sandbox::SandboxConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    pub name: String,
    pub kind: RecommenderKind,
    /// Factorization-machine settings; read only when `kind = "fm"`.
    #[serde(default)]
    pub fm: FmConfig,
    /// JSON-lines ranked lists; required when `kind = "external"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Oldest share of each user's training history to fit on.
    #[serde(default = "one")]
    pub train_fraction: f64,
}

fn one() -> f64 {
    1.0
}

impl ArmSpec {
    pub fn new(name: impl Into<String>, kind: RecommenderKind) -> Self {
        ArmSpec { name: name.into(), kind, fm: FmConfig::default(), path: None, train_fraction: 1.0 }
    }

    pub fn fm(name: impl Into<String>, fm: FmConfig) -> Self {
        ArmSpec { fm, ..ArmSpec::new(name, RecommenderKind::Fm) }
    }

    /// Resolves the spec, loading external lists relative to `base`.
    pub fn recommender_spec(&self, base: &Path, min_len: usize) -> Result<RecommenderSpec, HarnessError> {
        Ok(match self.kind {
            RecommenderKind::Random => RecommenderSpec::Random,
            RecommenderKind::Popularity => RecommenderSpec::Popularity,
            RecommenderKind::Fm => RecommenderSpec::Fm(self.fm.clone()),
            RecommenderKind::External => {
                let p = self.path.as_ref().ok_or_else(|| HarnessError::Config(format!("arm {:?} needs a path", self.name)))?;
                RecommenderSpec::External(ExternalLists::load(&base.join(p), min_len)?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    /// Simulate a seeded sample of this many users instead of everyone.
    pub sample: Option<usize>,
    /// Restrict the cohort to these users.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub users: Option<Vec<UserId>>,
    pub sessions_per_user: u32,
    /// Split users across arms instead of giving every arm the same cohort.
    pub disjoint: bool,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec { sample: None, users: None, sessions_per_user: 1, disjoint: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub rule: RuleConfig,
    /// Extra prompts after an unusable reply.
    pub retry_budget: u32,
    /// Replacement decision template.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template: Option<PathBuf>,
    /// Scale budgets and thresholds by each user's activity trait.
    pub use_traits: bool,
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec { kind: PolicyKind::Rule, rule: RuleConfig::default(), retry_budget: 2, template: None, use_traits: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FatigueSpec {
    pub preset: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi_min: Option<f64>,
}

impl Default for FatigueSpec {
    fn default() -> Self {
        FatigueSpec { preset: "mini-column".into(), budget: None, phi_max: None, phi_min: None }
    }
}

impl FatigueSpec {
    pub fn resolve(&self) -> Result<FatigueConfig, HarnessError> {
        let mut f = FatigueConfig::preset(&self.preset)?;
        if let Some(b) = self.budget {
            f.budget = b;
        }
        if let Some(p) = self.phi_max {
            f.phi_max = p;
        }
        if let Some(p) = self.phi_min {
            f.phi_min = p;
        }
        f.validate()?;
        Ok(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    Deterministic,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemorySpec {
    pub embedder: EmbedderKind,
    pub dimension: usize,
    /// Records retrieved per text query.
    pub retrieval_k: usize,
    /// Load each user's training history into long-term memory first.
    pub seed_history: bool,
}

impl Default for MemorySpec {
    fn default() -> Self {
        MemorySpec { embedder: EmbedderKind::Deterministic, dimension: 64, retrieval_k: 5, seed_history: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SeedSpec {
    pub master: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricSpec {
    pub cvr: CvrDefinition,
}

/// A full A/B experiment, loadable from TOML or JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub arms: Vec<ArmSpec>,
    #[serde(default)]
    pub cohort: CohortSpec,
    #[serde(default)]
    pub policy: PolicySpec,
    #[serde(default)]
    pub fatigue: FatigueSpec,
    #[serde(default)]
    pub sandbox: SandboxConfig,
    #[serde(default)]
    pub memory: MemorySpec,
    #[serde(default)]
    pub seed: SeedSpec,
    #[serde(default)]
    pub metrics: MetricSpec,
    /// Fit and simulate arms concurrently.
    #[serde(default)]
    pub parallel_arms: bool,
}

impl ExperimentConfig {
    pub fn new(arms: Vec<ArmSpec>) -> Self {
        ExperimentConfig {
            arms,
            cohort: CohortSpec::default(),
            policy: PolicySpec::default(),
            fatigue: FatigueSpec::default(),
            sandbox: SandboxConfig::default(),
            memory: MemorySpec::default(),
            seed: SeedSpec::default(),
            metrics: MetricSpec::default(),
            parallel_arms: false,
        }
    }

    /// Parses by extension: `.json` as JSON, anything else as TOML.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let cfg: ExperimentConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| HarnessError::Parse(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| HarnessError::Parse(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.arms.is_empty() {
            return Err(HarnessError::Config("at least one arm is required".into()));
        }
        let mut names = BTreeSet::new();
        for a in &self.arms {
            if a.name.trim().is_empty() || a.name.contains(['/', '\\']) {
                return Err(HarnessError::Config(format!("bad arm name {:?}", a.name)));
            }
            if !names.insert(a.name.as_str()) {
                return Err(HarnessError::Config(format!("duplicate arm name {:?}", a.name)));
            }
            if !(a.train_fraction > 0.0 && a.train_fraction <= 1.0) {
                return Err(HarnessError::Config(format!("arm {:?}: train_fraction must be in (0, 1]", a.name)));
            }
            if a.kind == RecommenderKind::External && a.path.is_none() {
                return Err(HarnessError::Config(format!("arm {:?}: external arms need a path", a.name)));
            }
        }
        if self.cohort.sessions_per_user == 0 {
            return Err(HarnessError::Config("sessions_per_user must be at least 1".into()));
        }
        if self.cohort.sample == Some(0) {
            return Err(HarnessError::Config("cohort sample must be positive".into()));
        }
        if self.sandbox.k < self.sandbox.page_size || self.sandbox.page_size == 0 {
            return Err(HarnessError::Config("sandbox k must be at least one page".into()));
        }
        self.fatigue.resolve()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_with_defaults() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
            [[arms]]
            name = "random"
            kind = "random"

            [[arms]]
            name = "fm-half"
            kind = "fm"
            train_fraction = 0.5
            fm = { epochs = 3 }

            [fatigue]
            preset = "4o-column"

            [seed]
            master = 11
            "#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.arms[1].fm.epochs, 3);
        assert_eq!(cfg.arms[1].fm.latent_dim, 16);
        assert_eq!(cfg.sandbox.k, 20);
        assert_eq!(cfg.cohort.sessions_per_user, 1);
        assert_eq!(cfg.fatigue.resolve().unwrap().costs.click, 15.0);
        assert_eq!(cfg.seed.master, 11);
    }

    #[test]
    fn rejects_bad_configs() {
        let dup = ExperimentConfig::new(vec![ArmSpec::new("a", RecommenderKind::Random), ArmSpec::new("a", RecommenderKind::Popularity)]);
        assert!(dup.validate().is_err());
        assert!(ExperimentConfig::new(vec![]).validate().is_err());
        let ext = ExperimentConfig::new(vec![ArmSpec::new("x", RecommenderKind::External)]);
        assert!(ext.validate().is_err());
        let mut bad = ExperimentConfig::new(vec![ArmSpec::new("a", RecommenderKind::Random)]);
        bad.fatigue.preset = "nope".into();
        assert!(bad.validate().is_err());
    }
}
