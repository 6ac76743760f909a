//! Run configuration: one JSON document with named sections for every
//! module. Unknown keys are rejected at every level.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::classifier::{GroupSet, TrainConfig};
use crate::error::{Error, Result};
use crate::generator::{ExternalGenerator, Generator, Oracle, OracleConfig};
use crate::labeling::DEFAULT_REVIEW_THRESHOLD;
use crate::pipeline::BalancePlan;
use crate::steering::SteerPolicy;

pub const CONFIG_FORMAT: &str = "fairgen-config/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format: String,
    #[serde(default)]
    pub seed: u64,
    /// Group names; defaults follow `oracle.group_count`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<String>>,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub generator: GeneratorConfig,
    /// Feature-space group classifier training.
    #[serde(default)]
    pub train: TrainConfig,
    /// Latent-space probe training.
    #[serde(default)]
    pub probe_train: TrainConfig,
    #[serde(default)]
    pub samples: SampleSizes,
    #[serde(default)]
    pub plan: PlanConfig,
    #[serde(default)]
    pub steer: SteerPolicy,
    #[serde(default)]
    pub review: ReviewConfig,
    #[serde(default = "default_heads")]
    pub heads: Vec<HeadSpec>,
    #[serde(default)]
    pub artifacts: ArtifactPaths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GeneratorConfig {
    #[default]
    Oracle,
    External {
        endpoint: String,
        #[serde(default = "default_attempts")]
        attempts: u32,
        #[serde(default = "default_backoff_ms")]
        backoff_ms: u64,
    },
}

fn default_attempts() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSizes {
    /// Oracle samples for the feature-space classifier.
    pub classifier: usize,
    /// Oracle samples per attribute head.
    pub heads: usize,
}

impl Default for SampleSizes {
    fn default() -> Self {
        Self {
            classifier: 5_000,
            heads: 5_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanConfig {
    pub quota_per_group: usize,
    /// Groups to fill; all groups when absent.
    pub groups: Option<Vec<usize>>,
    /// Defaults to `50 * quota_per_group`.
    pub max_attempts_per_group: Option<usize>,
    pub verify: bool,
    pub keep_rejects: bool,
    pub batch_size: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            quota_per_group: 100,
            groups: None,
            max_attempts_per_group: None,
            verify: true,
            keep_rejects: false,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReviewConfig {
    pub threshold: f64,
}

impl Default for ReviewConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_REVIEW_THRESHOLD,
        }
    }
}

/// A downstream attribute. With the oracle generator, the n-th head is
/// trained against the oracle's n-th hidden attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub attribute: String,
    pub values: Vec<String>,
}

fn default_heads() -> Vec<HeadSpec> {
    [
        ("smile", ["no", "yes"]),
        ("eye_state", ["closed", "open"]),
        ("gender", ["female", "male"]),
    ]
    .into_iter()
    .map(|(a, v)| HeadSpec {
        attribute: a.into(),
        values: v.iter().map(|s| s.to_string()).collect(),
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ArtifactPaths {
    pub classifier: Option<PathBuf>,
    pub probes: Option<PathBuf>,
    pub heads: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format: CONFIG_FORMAT.into(),
            seed: 0,
            groups: None,
            oracle: OracleConfig::default(),
            generator: GeneratorConfig::default(),
            train: TrainConfig::default(),
            probe_train: TrainConfig::default(),
            samples: SampleSizes::default(),
            plan: PlanConfig::default(),
            steer: SteerPolicy::default(),
            review: ReviewConfig::default(),
            heads: default_heads(),
            artifacts: ArtifactPaths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CONFIG_FORMAT {
            return Err(Error::Config(format!(
                "unsupported config format {:?}, expected {CONFIG_FORMAT:?}",
                self.format
            )));
        }
        self.oracle.validate()?;
        self.train.validate()?;
        self.probe_train.validate()?;
        self.steer.validate()?;
        if !(0.0..=1.0).contains(&self.review.threshold) {
            return Err(Error::Config(format!(
                "review.threshold must be in [0, 1], got {}",
                self.review.threshold
            )));
        }
        let groups = self.group_set()?;
        if groups.len() != self.oracle.group_count {
            return Err(Error::Config(format!(
                "{} group names for {} groups",
                groups.len(),
                self.oracle.group_count
            )));
        }
        for h in &self.heads {
            if h.values.len() < 2 {
                return Err(Error::Config(format!(
                    "head {:?} needs at least two values",
                    h.attribute
                )));
            }
        }
        self.balance_plan(None)?.validate(groups.len())
    }

    pub fn group_set(&self) -> Result<GroupSet> {
        match &self.groups {
            Some(names) => GroupSet::new(names.clone()),
            None => Ok(GroupSet::default_for(self.oracle.group_count)),
        }
    }

    pub fn oracle(&self) -> Result<Oracle> {
        Oracle::new(self.oracle.clone())
    }

    /// The configured generator; external generators use the oracle
    /// section's dimensions.
    pub fn generator(&self) -> Result<Box<dyn Generator>> {
        Ok(match &self.generator {
            GeneratorConfig::Oracle => Box::new(self.oracle()?),
            GeneratorConfig::External {
                endpoint,
                attempts,
                backoff_ms,
            } => Box::new(
                ExternalGenerator::new(endpoint.clone(), self.oracle.latent_dim, self.oracle.feature_dim)?
                    .with_retry(*attempts, Duration::from_millis(*backoff_ms)),
            ),
        })
    }

    /// Plan from the `plan` and `steer` sections; `quota` overrides the
    /// configured quota (and the default attempt budget with it).
    pub fn balance_plan(&self, quota: Option<usize>) -> Result<BalancePlan> {
        let q = quota.unwrap_or(self.plan.quota_per_group);
        let groups = self
            .plan
            .groups
            .clone()
            .unwrap_or_else(|| (0..self.oracle.group_count).collect());
        let mut plan = BalancePlan::new(q, groups);
        if let Some(max) = self.plan.max_attempts_per_group {
            plan.max_attempts_per_group = max;
        }
        plan.steer_policy = self.steer;
        plan.verify = self.plan.verify;
        plan.keep_rejects = self.plan.keep_rejects;
        plan.batch_size = self.plan.batch_size;
        Ok(plan)
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::from_json(r#"{"format": "fairgen-config/1"}"#).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.group_set().unwrap().names()[3], "White");
        assert_eq!(cfg.balance_plan(None).unwrap().max_attempts_per_group, 5_000);
    }

    #[test]
    fn format_is_required() {
        assert!(RunConfig::from_json("{}").is_err());
        assert!(RunConfig::from_json(r#"{"format": "fairgen-config/2"}"#).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in [
            r#"{"format": "fairgen-config/1", "colour": 1}"#,
            r#"{"format": "fairgen-config/1", "oracle": {"latent_dims": 4}}"#,
            r#"{"format": "fairgen-config/1", "train": {"lr": 0.1}}"#,
            r#"{"format": "fairgen-config/1", "generator": {"kind": "external", "endpoint": "http://x", "retries": 2}}"#,
        ] {
            let err = RunConfig::from_json(bad).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{bad}");
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        for bad in [
            r#"{"format": "fairgen-config/1", "train": {"validation_fraction": 0.6}}"#,
            r#"{"format": "fairgen-config/1", "review": {"threshold": 1.5}}"#,
            r#"{"format": "fairgen-config/1", "plan": {"quota_per_group": 10, "max_attempts_per_group": 5}}"#,
            r#"{"format": "fairgen-config/1", "groups": ["a", "b"]}"#,
        ] {
            assert!(RunConfig::from_json(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn external_generator_section() {
        let cfg = RunConfig::from_json(
            r#"{"format": "fairgen-config/1", "generator": {"kind": "external", "endpoint": "http://127.0.0.1:9"}}"#,
        )
        .unwrap();
        assert_eq!(
            cfg.generator,
            GeneratorConfig::External {
                endpoint: "http://127.0.0.1:9".into(),
                attempts: 3,
                backoff_ms: 200
            }
        );
        assert_eq!(cfg.generator().unwrap().descriptor()["kind"], "external");
    }

    #[test]
    fn round_trips_through_json() {
        let mut cfg = RunConfig {
            oracle: OracleConfig::desk(),
            ..RunConfig::default()
        };
        cfg.plan.groups = Some(vec![0, 1, 2]);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }
}
