//! Experiment configuration: one TOML document with a section per module,
//! plus `section.key=value` overrides applied before deserialization.

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::mcts::MctsConfig;
use crate::training::TrainConfig;
use crate::worldmodel::{AgentVariant, ModelConfig};

use super::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_eval: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_train: 5,
            n_eval: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Episodes per setting and variant.
    pub episodes: usize,
    pub seed: u64,
    pub variants: Vec<AgentVariant>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            seed: 0,
            variants: vec![AgentVariant::EqMuZero, AgentVariant::StdMuZero],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub cases: usize,
    pub budget: usize,
    pub seed: u64,
    /// Longest random walk used to reach an audited state.
    pub max_walk: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            cases: 100,
            budget: 50,
            seed: 0,
            max_walk: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: AgentVariant,
    pub out_dir: String,
    pub env: EnvConfig,
    pub model: ModelConfig,
    pub mcts: MctsConfig,
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub eval: EvalConfig,
    pub audit: AuditConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variant: AgentVariant::EqMuZero,
            out_dir: "runs/default".into(),
            env: EnvConfig::default(),
            model: ModelConfig::default(),
            mcts: MctsConfig::default(),
            train: TrainConfig::default(),
            split: SplitConfig::default(),
            eval: EvalConfig::default(),
            audit: AuditConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses `text` after applying `overrides` of the form `a.b.c=value`.
    /// Values are read as TOML (`3`, `true`, `"x"`, `[1, 2]`); anything that
    /// does not parse is taken as a bare string.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, HarnessError> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        for ov in overrides {
            apply_override(&mut doc, ov)?;
        }
        let cfg: Self = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let cfg = |e: String| HarnessError::Config(e);
        self.env.validate().map_err(|e| cfg(e.to_string()))?;
        self.mcts.validate().map_err(|e| cfg(e.to_string()))?;
        self.train.validate().map_err(|e| cfg(e.to_string()))?;
        if self.model.latent_channels == 0 || self.model.hidden == 0 {
            return Err(cfg("model widths must be positive".into()));
        }
        if !(4..=255).contains(&self.model.num_actions) {
            return Err(cfg(format!(
                "num_actions {} must cover the four moves",
                self.model.num_actions
            )));
        }
        if self.split.n_train == 0 {
            return Err(cfg("split.n_train must be positive".into()));
        }
        if self.audit.budget == 0 {
            return Err(cfg("audit.budget must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn apply_override(doc: &mut toml::Table, ov: &str) -> Result<(), HarnessError> {
    let (key, raw) = ov
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("override {ov:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(HarnessError::Config(format!("override {ov:?} has an empty key segment")));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let (last, parents) = path.split_last().expect("nonempty");
    let mut table = doc;
    for p in parents {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("override {ov:?}: {p} is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}
