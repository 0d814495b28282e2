//! Clipped surrogate objective, exact KL to the old policy, and the
//! parameter update.
//!
//! Per token, with importance ratio `ρ = π_θ(y_t) / π_old(y_t)` and sequence
//! advantage `A`, the objective is `min(ρA, clip(ρ, 1−ε_low, 1+ε_high)A)`.
//! The loss is its negated aggregate plus `β · KL(π_θ ‖ π_old)` averaged over
//! every stored context. A ratio exactly on a clip boundary counts as
//! unclipped.

use serde::{Deserialize, Serialize};

use crate::advantage::AdvantageBatch;
use crate::error::{config_err, Error, Result};
use crate::policy::{
    accumulate_logprob_grad, header_value, log_softmax, read_matrix_rows, token_logprobs,
    write_matrix_rows, Context, Matrix, PolicyModel, PolicyParams, Vocab,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Every token in the batch weighs the same.
    TokenMean,
    /// Mean over sequences of the per-sequence token mean.
    SequenceMeanOfMeans,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlMode {
    None,
    ExactCategoricalToOld,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub eps_low: f64,
    pub eps_high: f64,
    pub beta: f64,
    pub aggregation: Aggregation,
    pub learning_rate: f64,
    pub update_epochs: usize,
    pub kl_mode: KlMode,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Denominator guard in z-score advantages.
    pub eps_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            eps_low: 0.2,
            eps_high: 0.28,
            beta: 0.0,
            aggregation: Aggregation::TokenMean,
            learning_rate: 0.02,
            update_epochs: 1,
            kl_mode: KlMode::None,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            eps_norm: 1e-6,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_low > 0.0 && self.eps_high > 0.0) {
            return config_err("clip ranges eps_low and eps_high must be positive");
        }
        if self.eps_low >= 1.0 {
            return config_err("eps_low must be below 1");
        }
        if !(self.learning_rate > 0.0) {
            return config_err("learning_rate must be positive");
        }
        if self.beta < 0.0 {
            return config_err("beta must be non-negative");
        }
        if self.update_epochs == 0 {
            return config_err("update_epochs must be at least 1");
        }
        if !(self.eps_norm > 0.0) {
            return config_err("eps_norm must be positive");
        }
        Ok(())
    }
}

/// Which branch of the clipped objective is active for one token.
pub fn clip_active(ratio: f64, advantage: f64, eps_low: f64, eps_high: f64) -> bool {
    (advantage > 0.0 && ratio > 1.0 + eps_high) || (advantage < 0.0 && ratio < 1.0 - eps_low)
}

pub fn clipped_objective(ratio: f64, advantage: f64, eps_low: f64, eps_high: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps_low, 1.0 + eps_high);
    (ratio * advantage).min(clipped * advantage)
}

/// Per-sequence token weight under the chosen aggregation.
fn token_weights(batch: &AdvantageBatch, agg: Aggregation) -> Vec<f64> {
    match agg {
        Aggregation::TokenMean => {
            let n = batch.num_tokens().max(1) as f64;
            vec![1.0 / n; batch.len()]
        }
        Aggregation::SequenceMeanOfMeans => {
            let n = batch.len() as f64;
            batch.entries.iter().map(|e| 1.0 / (n * e.traj.len().max(1) as f64)).collect()
        }
    }
}

/// Loss and exact gradient of the clipped surrogate over `batch`.
pub fn surrogate_loss(
    model: &PolicyModel,
    params: &PolicyParams,
    old_params: &PolicyParams,
    batch: &AdvantageBatch,
    cfg: &OptimConfig,
) -> Result<(f64, Matrix)> {
    model.check_params(params)?;
    model.check_params(old_params)?;
    let mut grad = Matrix::zeros(params.weights.rows(), params.weights.cols());
    let mut loss = 0.0;
    let weights = token_weights(batch, cfg.aggregation);

    for (entry, &w) in batch.entries.iter().zip(&weights) {
        let traj = entry.traj;
        let a = entry.advantage;
        let logps = token_logprobs(model, params, traj);
        let scales: Vec<f64> = logps
            .iter()
            .zip(&traj.behavior_logprobs)
            .map(|(lp, old)| {
                let ratio = (lp - old).exp();
                loss -= w * clipped_objective(ratio, a, cfg.eps_low, cfg.eps_high);
                if a == 0.0 || clip_active(ratio, a, cfg.eps_low, cfg.eps_high) {
                    0.0
                } else {
                    // d(ρA)/dlogπ = ρA
                    -w * a * ratio
                }
            })
            .collect();
        if scales.iter().any(|&s| s != 0.0) {
            accumulate_logprob_grad(model, params, traj, &scales, &mut grad);
        }
    }

    if cfg.beta != 0.0 && cfg.kl_mode == KlMode::ExactCategoricalToOld {
        let n_ctx = batch.num_tokens();
        if n_ctx > 0 {
            let scale = cfg.beta / n_ctx as f64;
            for e in &batch.entries {
                for ctx in &e.traj.contexts {
                    loss += scale * kl_and_grad(model, params, old_params, ctx, e.traj.temperature, scale, &mut grad);
                }
            }
        }
    }
    Ok((loss, grad))
}

/// Exact categorical KL at one context; adds `scale · ∇KL` into `grad`.
fn kl_and_grad(
    model: &PolicyModel,
    params: &PolicyParams,
    old_params: &PolicyParams,
    ctx: &Context,
    temperature: f64,
    scale: f64,
    grad: &mut Matrix,
) -> f64 {
    let legal = model.vocab.legal(ctx.role);
    let (lp, lq) = step_logprobs(&model.vocab, params, old_params, ctx, temperature);
    let kl: f64 = lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum();
    for (i, &t) in legal.iter().enumerate() {
        let coef = scale * lp[i].exp() * (lp[i] - lq[i] - kl) / temperature;
        if coef == 0.0 {
            continue;
        }
        let row = grad.row_mut(t);
        for &(j, v) in &ctx.features.0 {
            row[j] += coef * v;
        }
    }
    kl
}

fn step_logprobs(
    vocab: &Vocab,
    params: &PolicyParams,
    old_params: &PolicyParams,
    ctx: &Context,
    temperature: f64,
) -> (Vec<f64>, Vec<f64>) {
    let legal = vocab.legal(ctx.role);
    let z: Vec<f64> = legal.iter().map(|&t| ctx.features.dot(params.weights.row(t))).collect();
    let zo: Vec<f64> = legal.iter().map(|&t| ctx.features.dot(old_params.weights.row(t))).collect();
    (log_softmax(&z, temperature), log_softmax(&zo, temperature))
}

/// Mean over `contexts` of `KL(π_θ(·|ctx) ‖ π_old(·|ctx))` over legal tokens.
pub fn kl_to_old(
    model: &PolicyModel,
    params: &PolicyParams,
    old_params: &PolicyParams,
    contexts: &[Context],
    temperature: f64,
) -> Result<f64> {
    model.check_params(params)?;
    model.check_params(old_params)?;
    if contexts.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = contexts
        .iter()
        .map(|ctx| {
            let (lp, lq) = step_logprobs(&model.vocab, params, old_params, ctx, temperature);
            lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum::<f64>()
        })
        .sum();
    // clamp the tiny negative rounding residue of identical distributions
    Ok((total / contexts.len() as f64).max(0.0))
}

/// Adam (with bias correction and optional decoupled weight decay) or plain
/// gradient descent.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub steps: u64,
    m: Matrix,
    v: Matrix,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, rows: usize, cols: usize) -> Self {
        Self { kind, steps: 0, m: Matrix::zeros(rows, cols), v: Matrix::zeros(rows, cols) }
    }

    pub fn apply_update(&mut self, params: &PolicyParams, grad: &Matrix, cfg: &OptimConfig) -> Result<PolicyParams> {
        if grad.shape() != params.weights.shape() || grad.shape() != self.m.shape() {
            return Err(Error::Dimension {
                expected: format!("{:?}", params.weights.shape()),
                got: format!("{:?}", grad.shape()),
            });
        }
        if !grad.is_finite() {
            return Err(Error::NonFiniteGradient { step: self.steps });
        }
        let mut next = params.clone();
        next.version += 1;
        self.steps += 1;
        let lr = cfg.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => next.weights.add_scaled(grad, -lr),
            OptimizerKind::Adam => {
                let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
                let t = self.steps as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                let w = next.weights.as_mut_slice();
                let m = self.m.as_mut_slice();
                let v = self.v.as_mut_slice();
                for (i, &g) in grad.as_slice().iter().enumerate() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g;
                    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                    let step = (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.adam_eps);
                    w[i] -= lr * (step + cfg.weight_decay * w[i]);
                }
            }
        }
        Ok(next)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("prco-optim 1\n");
        let kind = match self.kind {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        };
        out.push_str(&format!("kind {kind}\nsteps {}\nrows {}\ncols {}\n", self.steps, self.m.rows(), self.m.cols()));
        write_matrix_rows(&mut out, &self.m);
        write_matrix_rows(&mut out, &self.v);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("prco-optim 1") {
            return Err(Error::Parse("missing optimizer header".into()));
        }
        let kind: String = header_value(lines.next(), "kind")?;
        let kind = match kind.as_str() {
            "adam" => OptimizerKind::Adam,
            "sgd" => OptimizerKind::Sgd,
            other => return Err(Error::Parse(format!("unknown optimizer {other}"))),
        };
        let steps = header_value(lines.next(), "steps")?;
        let rows = header_value(lines.next(), "rows")?;
        let cols = header_value(lines.next(), "cols")?;
        let m = read_matrix_rows(&mut lines, rows, cols)?;
        let v = read_matrix_rows(&mut lines, rows, cols)?;
        Ok(Self { kind, steps, m, v })
    }
}
