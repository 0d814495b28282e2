//! Step records, run logs, and evaluation diagnostics.

mod categorize;
mod eval;
mod log;
mod passk;

pub use categorize::{categorize_error, contradicts_scene, omits_relevant, relevant_facts, ErrorCategory};
pub use eval::{eval_set, evaluate, EvalMode, EvalReport, Pipeline};
pub use log::{render_svg, write_csv, MetricsLog};
pub use passk::{pass_at_k, pass_at_k_single};

use serde::{Deserialize, Serialize};

/// Fractions of an evaluation set per error category.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorRates {
    pub perception: f64,
    pub reasoning: f64,
    pub other: f64,
}

impl ErrorRates {
    pub fn from_categories(cats: &[ErrorCategory]) -> Self {
        let n = cats.len().max(1) as f64;
        let frac = |c: ErrorCategory| cats.iter().filter(|x| **x == c).count() as f64 / n;
        Self {
            perception: frac(ErrorCategory::Perception),
            reasoning: frac(ErrorCategory::Reasoning),
            other: frac(ErrorCategory::Other),
        }
    }

    pub fn total(&self) -> f64 {
        self.perception + self.reasoning + self.other
    }
}

/// One training step. Role-specific fields are `None` for algorithms that
/// do not produce them; evaluation fields are `None` on steps without an
/// evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub mean_solver_reward: f64,
    pub mean_observer_reward: Option<f64>,
    /// Mean over instances of the population std of the caption rewards.
    pub caption_reward_std: Option<f64>,
    pub leakage_rate: Option<f64>,
    pub degenerate_group_rate: f64,
    /// Mean number of instances drawn per batch slot.
    pub mean_attempts: f64,
    pub loss: f64,
    pub num_tokens: usize,
    pub solver_image_visible: bool,
    pub eval_accuracy: Option<f64>,
    pub error_rates: Option<ErrorRates>,
}

impl StepMetrics {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }

    pub fn from_json_line(line: &str) -> crate::Result<Self> {
        Ok(serde_json::from_str(line)?)
    }
}
