//! Run configuration.
//!
//! Config files are flat `key = value` text grouped under `[env]`,
//! `[policy]`, `[reward]`, `[optim]` and `[train]` (a TOML subset). Values
//! not given fall back to the preset of the chosen `train.algorithm`, and
//! `section.key=value` overrides are applied on top of the file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::optimize::{Aggregation, KlMode, OptimConfig};
use crate::policy::PolicyConfig;
use crate::reward::RewardConfig;
use crate::synthenv::EnvConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Grpo,
    Dapo,
    Prco,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "grpo" => Ok(Algorithm::Grpo),
            "dapo" => Ok(Algorithm::Dapo),
            "prco" => Ok(Algorithm::Prco),
            other => Err(Error::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// 32 instances per step.
    Desk,
    /// 384 instances per step.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub steps: u64,
    /// Instances per step.
    pub rollout_batch: usize,
    pub g_o: usize,
    pub g_s: usize,
    /// Flat group size for the single-role baselines. Presets match the
    /// dual-role per-instance budget, `g_o * (g_s + 1)`.
    pub group_size: usize,
    pub warmup_steps: u64,
    pub temperature: f64,
    /// Dynamic-sampling retries per batch slot; 0 disables resampling.
    pub max_retries: usize,
    pub master_seed: u64,
    pub eval_interval: u64,
    pub eval_size: usize,
    pub eval_seed: u64,
    pub no_observer_update: bool,
    pub no_solver_update: bool,
    pub no_warmup: bool,
    pub solver_image_never: bool,
    pub fixed_utility_estimator: bool,
    pub leakage_checker_disabled: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Prco,
            steps: 200,
            rollout_batch: 32,
            g_o: 4,
            g_s: 8,
            group_size: 8,
            warmup_steps: 40,
            temperature: 1.0,
            max_retries: 20,
            master_seed: 0,
            eval_interval: 20,
            eval_size: 500,
            eval_seed: 1_000_003,
            no_observer_update: false,
            no_solver_update: false,
            no_warmup: false,
            solver_image_never: false,
            fixed_utility_estimator: false,
            leakage_checker_disabled: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub reward: RewardConfig,
    pub optim: OptimConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Algorithm::Prco, Scale::Desk)
    }
}

impl RunConfig {
    pub fn preset(algorithm: Algorithm, scale: Scale) -> Self {
        let mut train = TrainConfig { algorithm, ..Default::default() };
        let mut optim = OptimConfig::default();
        if algorithm != Algorithm::Prco {
            train.group_size = train.g_o * (train.g_s + 1);
        }
        match algorithm {
            Algorithm::Prco => {}
            Algorithm::Dapo => {
                train.warmup_steps = 0;
            }
            Algorithm::Grpo => {
                train.warmup_steps = 0;
                train.max_retries = 0;
                optim.eps_high = 0.3;
                optim.beta = 0.01;
                optim.kl_mode = KlMode::ExactCategoricalToOld;
                optim.aggregation = Aggregation::SequenceMeanOfMeans;
            }
        }
        if scale == Scale::Full {
            train.rollout_batch = 384;
        }
        Self {
            env: EnvConfig::default(),
            policy: PolicyConfig::default(),
            reward: RewardConfig::default(),
            optim,
            train,
        }
    }

    /// Checks invariants and applies flag implications (`no_warmup` forces
    /// `warmup_steps = 0`).
    pub fn normalized(mut self) -> Result<Self> {
        if self.train.no_warmup {
            self.train.warmup_steps = 0;
        }
        if self.train.leakage_checker_disabled {
            self.reward.leakage_enabled = false;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.reward.validate()?;
        self.optim.validate()?;
        let t = &self.train;
        if t.warmup_steps > t.steps {
            return config_err(format!("warmup_steps ({}) exceeds steps ({})", t.warmup_steps, t.steps));
        }
        if t.no_warmup && t.warmup_steps != 0 {
            return config_err("no_warmup requires warmup_steps = 0");
        }
        if t.no_observer_update && t.no_solver_update {
            return config_err("no_observer_update and no_solver_update together leave nothing to update");
        }
        if t.rollout_batch == 0 {
            return config_err("rollout_batch must be positive");
        }
        if !(t.temperature > 0.0) {
            return config_err("temperature must be positive");
        }
        match t.algorithm {
            Algorithm::Prco => {
                if t.g_o < 2 || t.g_s < 2 {
                    return config_err("g_o and g_s must be >= 2");
                }
            }
            Algorithm::Grpo | Algorithm::Dapo => {
                if t.group_size < 2 {
                    return config_err("group_size must be >= 2");
                }
            }
        }
        if t.eval_size == 0 {
            return config_err("eval_size must be positive");
        }
        Ok(())
    }

    /// Builds a config from file text plus `section.key=value` overrides.
    pub fn from_text(text: &str, overrides: &[String]) -> Result<Self> {
        let mut user: toml::Table = text.parse().map_err(|e| Error::Parse(format!("config: {e}")))?;
        for ov in overrides {
            apply_override(&mut user, ov)?;
        }
        let algorithm = match user.get("train").and_then(|t| t.get("algorithm")) {
            Some(toml::Value::String(s)) => s.parse()?,
            Some(other) => return config_err(format!("train.algorithm must be a string, got {other}")),
            None => Algorithm::Prco,
        };
        let scale = match user.get("train").and_then(|t| t.as_table()).and_then(|t| t.get("scale")) {
            Some(toml::Value::String(s)) if s == "full" => Scale::Full,
            Some(toml::Value::String(s)) if s == "desk" => Scale::Desk,
            Some(other) => return config_err(format!("train.scale must be \"desk\" or \"full\", got {other}")),
            None => Scale::Desk,
        };
        if let Some(t) = user.get_mut("train").and_then(|t| t.as_table_mut()) {
            t.remove("scale");
        }
        let preset = Self::preset(algorithm, scale);
        let mut merged = toml::Table::try_from(&preset).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, user);
        let cfg: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.normalized()
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?, overrides)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies `section.key=value`; the value is read as a TOML value and falls
/// back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let (section, key) = path
        .trim()
        .split_once('.')
        .ok_or_else(|| Error::Config(format!("override key {path:?} must be section.key")))?;
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let sec = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(Default::default()))
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("{section} is not a section")))?;
    sec.insert(key.to_string(), value);
    Ok(())
}
