//! On-disk run state: enough to resume a run and reproduce it exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalPoint, RunConfig};
use crate::error::Result;
use crate::metrics::MetricsLog;
use crate::optimize::Optimizer;
use crate::policy::PolicyParams;

const CONFIG: &str = "config.toml";
const PARAMS: &str = "params.txt";
const OPTIM: &str = "optim.txt";
const STATE: &str = "state.json";
const METRICS: &str = "metrics.jsonl";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub params: PolicyParams,
    pub optimizer: Optimizer,
    pub step: u64,
    pub log: MetricsLog,
    pub evals: Vec<EvalPoint>,
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    step: u64,
    evals: Vec<EvalPoint>,
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CONFIG), self.config.to_text())?;
        self.params.save(&dir.join(PARAMS), &self.config.env)?;
        fs::write(dir.join(OPTIM), self.optimizer.to_text())?;
        let state = StateFile { step: self.step, evals: self.evals.clone() };
        fs::write(dir.join(STATE), serde_json::to_string_pretty(&state)?)?;
        self.log.write_jsonl(&dir.join(METRICS))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config = RunConfig::load(&dir.join(CONFIG), &[])?;
        let (params, _) = PolicyParams::load(&dir.join(PARAMS))?;
        let optimizer = Optimizer::from_text(&fs::read_to_string(dir.join(OPTIM))?)?;
        let state: StateFile = serde_json::from_str(&fs::read_to_string(dir.join(STATE))?)?;
        let log = MetricsLog::read_jsonl(&dir.join(METRICS))?;
        Ok(Self { config, params, optimizer, step: state.step, log, evals: state.evals })
    }
}
