//! Experiment configuration.
//!
//! A TOML file with one table per module:
//!
//! ```toml
//! [experiment]
//! selector = "gradalign"
//! seed = 7
//! total_steps = 60
//!
//! [scenario]
//! kind = "noisy_rewards"
//!
//! [selection]
//! k_r = 16
//!
//! [grpo]
//! learning_rate = 0.05
//! ```
//!
//! Every key is optional; omitted keys take their defaults. Overrides use
//! dotted paths (`selection.k_v=64`) and are applied before deserializing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::SelectorKind;
use crate::error::{Error, Result};
use crate::grpo::GrpoConfig;
use crate::scenarios::ScenarioSpec;
use crate::selector::SelectionConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub selector: SelectorKind,
    /// Problems per GRPO step.
    pub n_train: usize,
    pub rollouts_per_training_problem: usize,
    pub total_steps: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub validation_size: usize,
    pub test_size: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            selector: SelectorKind::GradAlign,
            n_train: 16,
            rollouts_per_training_problem: 16,
            total_steps: 60,
            eval_every: 10,
            seed: 0,
            validation_size: 128,
            test_size: 256,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: RunSettings,
    pub scenario: ScenarioSpec,
    pub selection: SelectionConfig,
    pub grpo: GrpoConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.selection.validate()?;
        self.grpo.validate()?;
        let run = &self.experiment;
        let counts = [
            ("n_train", run.n_train),
            (
                "rollouts_per_training_problem",
                run.rollouts_per_training_problem,
            ),
            ("total_steps", run.total_steps),
            ("eval_every", run.eval_every),
            ("validation_size", run.validation_size),
            ("test_size", run.test_size),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if run.rollouts_per_training_problem < 2 {
            return Err(Error::Config(
                "rollouts_per_training_problem must be at least 2".into(),
            ));
        }
        if run.total_steps < self.selection.selection_interval {
            return Err(Error::Config(format!(
                "total_steps ({}) must be at least selection_interval ({})",
                run.total_steps, self.selection.selection_interval
            )));
        }
        if self.scenario.pool_size != self.selection.pool_size {
            return Err(Error::Config(format!(
                "scenario.pool_size ({}) and selection.pool_size ({}) differ",
                self.scenario.pool_size, self.selection.pool_size
            )));
        }
        if self.scenario.pool_size < self.selection.selection_ratio {
            return Err(Error::Config(
                "pool_size must be at least selection_ratio".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, overrides).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Applies `section.key=value` (or deeper paths) to a TOML table. The value is
/// parsed as a TOML literal, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!(
            "override {assignment:?} has an empty key"
        )));
    }
    let value = parse_literal(raw.trim());
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut node = table;
    for key in parents {
        let entry = node
            .entry((*key).to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| {
            Error::Config(format!("override {assignment:?}: {key} is not a table"))
        })?;
    }
    node.insert((*last).to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::ScenarioKind;
    use crate::selector::AlignmentMetric;

    #[test]
    fn empty_file_is_all_defaults() {
        let cfg = ExperimentConfig::from_toml_str("", &[]).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn sections_and_overrides() {
        let text = r#"
            [experiment]
            selector = "accgreedy"
            seed = 5
            [scenario]
            kind = "imbalanced"
            [selection]
            metric = "inner_product"
        "#;
        let cfg = ExperimentConfig::from_toml_str(
            text,
            &[
                "experiment.seed=9".into(),
                "experiment.selector=direct-val".into(),
                "selection.k_v=32".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.experiment.seed, 9);
        assert_eq!(cfg.experiment.selector, SelectorKind::DirectVal);
        assert_eq!(cfg.scenario.kind, ScenarioKind::Imbalanced);
        assert_eq!(cfg.selection.metric, AlignmentMetric::InnerProduct);
        assert_eq!(cfg.selection.k_v, 32);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.seed = i64::MAX as u64;
        cfg.grpo.learning_rate = 1e-6;
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text, &[]).unwrap(), cfg);
    }

    #[test]
    fn rejects_invalid_configs() {
        for bad in [
            "[experiment]\nnope = 1",
            "[selection]\nselection_ratio = 1",
            "[selection]\nk_r = 32\nk_v = 16",
            "[experiment]\ntotal_steps = 5",
            "[selection]\npool_size = 64",
            "[experiment]\nselector = \"greedy\"",
        ] {
            assert!(
                matches!(
                    ExperimentConfig::from_toml_str(bad, &[]),
                    Err(Error::Config(_))
                ),
                "{bad}"
            );
        }
        assert!(ExperimentConfig::from_toml_str("", &["noequals".into()]).is_err());
    }
}
