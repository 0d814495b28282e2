//! Training loops for the dual-role method and the GRPO / DAPO baselines.
//!
//! Each step runs in strict phases: snapshot the params, roll out every
//! batch slot in parallel against the snapshot, score and build advantages,
//! then apply a single update. All randomness is keyed by
//! `(master_seed, step, slot, attempt)`, so runs are bit-reproducible
//! regardless of thread count.

mod checkpoint;
mod config;

pub use checkpoint::Checkpoint;
pub use config::{apply_override, Algorithm, RunConfig, Scale, TrainConfig};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::advantage::{build_flat_advantages, build_prco_advantages, population_std, qualifying_captions, AdvantageBatch};
use crate::error::{config_err, Error, Result};
use crate::metrics::{eval_set, evaluate, ErrorRates, EvalMode, MetricsLog, Pipeline, StepMetrics};
use crate::optimize::{surrogate_loss, Optimizer};
use crate::policy::{PolicyModel, PolicyParams, Role};
use crate::reward::{leakage_indicator, score_flat, score_tree};
use crate::rng::{derive_seed, rng_for, stream};
use crate::rollout::{dynamic_sample, rollout_flat, rollout_prco_with_estimator, FlatGroup, RolloutTree, Sampled};
use crate::synthenv::{generate_instance, Instance};

const SELECT_TAG: u64 = 0x5e1ec7;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: PolicyParams,
    pub optimizer: Optimizer,
    /// Number of completed steps.
    pub step: u64,
    /// Frozen copy of the initial params (fixed-utility-estimator ablation).
    pub fixed_estimator: Option<PolicyParams>,
}

impl TrainState {
    pub fn init(model: &PolicyModel, cfg: &RunConfig) -> Self {
        let params = model.init_params(cfg.policy.init);
        let (rows, cols) = params.weights.shape();
        Self {
            fixed_estimator: cfg.train.fixed_utility_estimator.then(|| params.clone()),
            optimizer: Optimizer::new(cfg.optim.optimizer, rows, cols),
            params,
            step: 0,
        }
    }
}

/// Rollouts kept for one step, for inspection and optional dumping.
#[derive(Debug, Clone)]
pub enum StepRollouts {
    Trees(Vec<Sampled<RolloutTree>>),
    Groups(Vec<Sampled<FlatGroup>>),
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub metrics: StepMetrics,
    pub rollouts: StepRollouts,
    /// Composition of the update batch: (observer entries, solver entries).
    pub batch_roles: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    pub accuracy: f64,
    pub error_rates: ErrorRates,
}

pub fn solver_image_visible(cfg: &TrainConfig, step: u64) -> bool {
    if cfg.solver_image_never {
        false
    } else if cfg.no_warmup {
        true
    } else {
        step >= cfg.warmup_steps
    }
}

fn train_instance(cfg: &RunConfig, step: u64, slot: usize, attempt: usize) -> Result<Instance> {
    let seed = derive_seed(
        cfg.train.master_seed,
        &[stream::TRAIN_INSTANCE, step, slot as u64, attempt as u64],
    );
    generate_instance(seed, &cfg.env)
}

fn update(
    model: &PolicyModel,
    state: &mut TrainState,
    old: &PolicyParams,
    batch: &AdvantageBatch,
    cfg: &RunConfig,
) -> Result<f64> {
    let mut loss = 0.0;
    for _ in 0..cfg.optim.update_epochs {
        let (l, grad) = surrogate_loss(model, &state.params, old, batch, &cfg.optim)?;
        loss = l;
        state.params = state
            .optimizer
            .apply_update(&state.params, &grad, &cfg.optim)
            .map_err(|e| match e {
                Error::NonFiniteGradient { .. } => Error::NonFiniteGradient { step: state.step },
                other => other,
            })?;
    }
    Ok(loss)
}

/// One dual-role step: Observer captions, Solver answers per caption,
/// role-wise centered advantages, one update over the combined batch.
pub fn train_step_prco(model: &PolicyModel, state: &mut TrainState, cfg: &RunConfig) -> Result<StepOutput> {
    let t = &cfg.train;
    if t.no_observer_update && t.no_solver_update {
        return config_err("empty update batch: both roles dropped");
    }
    let step = state.step;
    let old = state.params.clone();
    let visible = solver_image_visible(t, step);
    let estimator = state.fixed_estimator.as_ref();

    // The caption-reward spread is measured on each slot's first draw, before
    // resampling filters out instances where captions make no difference.
    let drawn: Vec<(Sampled<RolloutTree>, f64)> = (0..t.rollout_batch)
        .into_par_iter()
        .map(|slot| {
            let mut rng = rng_for(t.master_seed, &[stream::TRAIN_ROLLOUT, step, slot as u64]);
            let mut first_std = None;
            let sampled = dynamic_sample(
                |attempt| {
                    let inst = train_instance(cfg, step, slot, attempt)?;
                    let mut tree = rollout_prco_with_estimator(
                        model, &old, estimator, &inst, t.g_o, t.g_s, visible, t.temperature, &mut rng,
                    )?;
                    score_tree(&model.vocab, &mut tree, &cfg.reward);
                    first_std.get_or_insert_with(|| population_std(&tree.observer_rewards));
                    Ok(tree)
                },
                |tree| qualifying_captions(tree).is_empty(),
                t.max_retries,
            )?;
            Ok((sampled, first_std.unwrap_or(0.0)))
        })
        .collect::<Result<_>>()?;
    let std_mean = drawn.iter().map(|(_, s)| s).sum::<f64>() / drawn.len() as f64;
    let sampled: Vec<Sampled<RolloutTree>> = drawn.into_iter().map(|(s, _)| s).collect();

    let mut batch = AdvantageBatch::default();
    for (slot, s) in sampled.iter().enumerate() {
        let mut rng = rng_for(t.master_seed, &[stream::TRAIN_ROLLOUT, step, slot as u64, SELECT_TAG]);
        batch.extend(build_prco_advantages(&s.result, &mut rng, 2 * slot)?);
    }
    batch.retain_role(|r| match r {
        Role::Observer => !t.no_observer_update,
        Role::Solver => !t.no_solver_update,
    });
    let batch_roles = (batch.count(Role::Observer), batch.count(Role::Solver));
    let loss = update(model, state, &old, &batch, cfg)?;

    let n = sampled.len() as f64;
    let trees = sampled.iter().map(|s| &s.result);
    let solver_total: f64 = trees.clone().flat_map(|tr| tr.solver_rewards.iter().flatten()).sum();
    let solver_count: usize = trees.clone().map(|tr| tr.g_o() * tr.g_s()).sum();
    let observer_total: f64 = trees.clone().flat_map(|tr| tr.observer_rewards.iter()).sum();
    let captions: usize = trees.clone().map(RolloutTree::g_o).sum();
    let leaks: usize = trees
        .clone()
        .flat_map(|tr| {
            tr.caption_trajs
                .iter()
                .map(|c| usize::from(leakage_indicator(&tr.instance.question, &model.vocab.decode(&c.tokens))))
        })
        .sum();

    let metrics = StepMetrics {
        step,
        mean_solver_reward: solver_total / solver_count as f64,
        mean_observer_reward: Some(observer_total / captions as f64),
        caption_reward_std: Some(std_mean),
        leakage_rate: Some(leaks as f64 / captions as f64),
        degenerate_group_rate: sampled.iter().filter(|s| s.degenerate).count() as f64 / n,
        mean_attempts: sampled.iter().map(|s| s.attempts).sum::<usize>() as f64 / n,
        loss,
        num_tokens: batch.num_tokens(),
        solver_image_visible: visible,
        eval_accuracy: None,
        error_rates: None,
    };
    drop(batch);
    state.step += 1;
    Ok(StepOutput { metrics, rollouts: StepRollouts::Trees(sampled), batch_roles })
}

/// One GRPO or DAPO step over flat answer groups with z-scored advantages.
/// Resampling of all-equal groups happens when `max_retries > 0`.
pub fn train_step_baseline(model: &PolicyModel, state: &mut TrainState, cfg: &RunConfig) -> Result<StepOutput> {
    let t = &cfg.train;
    let step = state.step;
    let old = state.params.clone();

    let sampled: Vec<Sampled<FlatGroup>> = (0..t.rollout_batch)
        .into_par_iter()
        .map(|slot| {
            let mut rng = rng_for(t.master_seed, &[stream::TRAIN_ROLLOUT, step, slot as u64]);
            dynamic_sample(
                |attempt| {
                    let inst = train_instance(cfg, step, slot, attempt)?;
                    let mut g = rollout_flat(model, &old, &inst, t.group_size, t.temperature, &mut rng)?;
                    score_flat(&model.vocab, &mut g, &cfg.reward);
                    Ok(g)
                },
                FlatGroup::is_degenerate,
                t.max_retries,
            )
        })
        .collect::<Result<_>>()?;

    let mut batch = AdvantageBatch::default();
    for (slot, s) in sampled.iter().enumerate() {
        batch.extend(build_flat_advantages(&s.result, cfg.optim.eps_norm, slot)?);
    }
    let batch_roles = (0, batch.len());
    let loss = update(model, state, &old, &batch, cfg)?;

    let n = sampled.len() as f64;
    let rewards: Vec<f64> = sampled.iter().flat_map(|s| s.result.rewards.iter().copied()).collect();
    let metrics = StepMetrics {
        step,
        mean_solver_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
        mean_observer_reward: None,
        caption_reward_std: None,
        leakage_rate: None,
        degenerate_group_rate: sampled.iter().filter(|s| s.degenerate).count() as f64 / n,
        mean_attempts: sampled.iter().map(|s| s.attempts).sum::<usize>() as f64 / n,
        loss,
        num_tokens: batch.num_tokens(),
        solver_image_visible: true,
        eval_accuracy: None,
        error_rates: None,
    };
    drop(batch);
    state.step += 1;
    Ok(StepOutput { metrics, rollouts: StepRollouts::Groups(sampled), batch_roles })
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub config: RunConfig,
    pub final_params: PolicyParams,
    pub metrics: MetricsLog,
    pub evals: Vec<EvalPoint>,
}

/// Drives a run step by step; holds everything needed to checkpoint.
pub struct Trainer {
    pub cfg: RunConfig,
    pub model: PolicyModel,
    pub state: TrainState,
    pub log: MetricsLog,
    pub evals: Vec<EvalPoint>,
    eval_instances: Vec<Instance>,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let cfg = cfg.normalized()?;
        let model = PolicyModel::new(&cfg.env, &cfg.policy)?;
        let state = TrainState::init(&model, &cfg);
        let eval_instances = eval_set(&cfg.env, cfg.train.eval_seed, cfg.train.eval_size)?;
        Ok(Self { cfg, model, state, log: MetricsLog::default(), evals: Vec::new(), eval_instances })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let mut t = Self::new(ckpt.config)?;
        t.model.check_params(&ckpt.params)?;
        t.state.params = ckpt.params;
        t.state.optimizer = ckpt.optimizer;
        t.state.step = ckpt.step;
        t.log = ckpt.log;
        t.evals = ckpt.evals;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            params: self.state.params.clone(),
            optimizer: self.state.optimizer.clone(),
            step: self.state.step,
            log: self.log.clone(),
            evals: self.evals.clone(),
        }
    }

    pub fn pipeline(&self) -> Pipeline {
        match self.cfg.train.algorithm {
            Algorithm::Prco => Pipeline::DualRole { solver_image: !self.cfg.train.solver_image_never },
            Algorithm::Grpo | Algorithm::Dapo => Pipeline::Direct,
        }
    }

    pub fn eval_instances(&self) -> &[Instance] {
        &self.eval_instances
    }

    /// Greedy evaluation of the current params on the held-out set.
    pub fn evaluate_now(&self) -> Result<EvalPoint> {
        let report = evaluate(
            &self.model,
            &self.state.params,
            &self.eval_instances,
            EvalMode::Greedy,
            self.pipeline(),
            self.cfg.train.eval_seed,
        )?;
        Ok(EvalPoint {
            step: self.state.step,
            accuracy: report.accuracy,
            error_rates: report.error_rates.unwrap_or_default(),
        })
    }

    pub fn done(&self) -> bool {
        self.state.step >= self.cfg.train.steps
    }

    /// Runs one step (with a pre-update evaluation on interval steps) and
    /// appends its metrics to the log.
    pub fn step(&mut self) -> Result<StepOutput> {
        let interval = self.cfg.train.eval_interval;
        let eval = if interval > 0 && self.state.step.is_multiple_of(interval) {
            let p = self.evaluate_now()?;
            self.evals.push(p);
            Some(p)
        } else {
            None
        };
        let mut out = match self.cfg.train.algorithm {
            Algorithm::Prco => train_step_prco(&self.model, &mut self.state, &self.cfg)?,
            Algorithm::Grpo | Algorithm::Dapo => train_step_baseline(&self.model, &mut self.state, &self.cfg)?,
        };
        if let Some(p) = eval {
            out.metrics.eval_accuracy = Some(p.accuracy);
            out.metrics.error_rates = Some(p.error_rates);
        }
        self.log.push(out.metrics.clone());
        Ok(out)
    }

    /// Runs the remaining steps, then evaluates the final params.
    pub fn run(mut self, mut on_step: impl FnMut(&Trainer, &StepOutput) -> Result<()>) -> Result<RunArtifacts> {
        while !self.done() {
            let out = self.step()?;
            on_step(&self, &out)?;
        }
        if self.cfg.train.eval_interval > 0 && self.evals.last().is_none_or(|e| e.step != self.state.step) {
            let p = self.evaluate_now()?;
            self.evals.push(p);
        }
        Ok(RunArtifacts { config: self.cfg, final_params: self.state.params, metrics: self.log, evals: self.evals })
    }
}

/// Runs a full training job in memory.
pub fn run_training(cfg: RunConfig) -> Result<RunArtifacts> {
    Trainer::new(cfg)?.run(|_, _| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(algorithm: Algorithm) -> RunConfig {
        let mut cfg = RunConfig::preset(algorithm, Scale::Desk);
        cfg.train.steps = 3;
        cfg.train.warmup_steps = cfg.train.warmup_steps.min(2);
        cfg.train.rollout_batch = 4;
        cfg.train.eval_size = 20;
        cfg.train.eval_interval = 2;
        cfg
    }

    #[test]
    fn zero_steps_leave_params_unchanged() {
        let mut cfg = tiny(Algorithm::Prco);
        cfg.train.steps = 0;
        cfg.train.warmup_steps = 0;
        let init = {
            let m = PolicyModel::new(&cfg.env, &cfg.policy).unwrap();
            m.init_params(cfg.policy.init)
        };
        let run = run_training(cfg).unwrap();
        assert!(run.metrics.records.is_empty());
        assert_eq!(run.final_params, init);
    }

    #[test]
    fn warmup_hides_the_image_then_restores_it() {
        let mut t = Trainer::new(tiny(Algorithm::Prco)).unwrap();
        for step in 0..3 {
            let out = t.step().unwrap();
            let StepRollouts::Trees(trees) = &out.rollouts else { panic!() };
            for s in trees {
                for a in s.result.answer_trajs.iter().flatten() {
                    for ctx in &a.contexts {
                        let scene = ctx.features.block(&t.model.layout.scene);
                        assert_eq!(scene.is_empty(), step < 2, "step {step}");
                        if step < 2 {
                            assert!(ctx.features.block(&t.model.layout.scene_count).is_empty());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn ablation_flags_shape_the_batch() {
        let mut cfg = tiny(Algorithm::Prco);
        cfg.train.no_observer_update = true;
        let mut t = Trainer::new(cfg).unwrap();
        let out = t.step().unwrap();
        assert_eq!(out.batch_roles.0, 0);

        let mut cfg = tiny(Algorithm::Prco);
        cfg.train.no_solver_update = true;
        let mut t = Trainer::new(cfg).unwrap();
        let out = t.step().unwrap();
        assert_eq!(out.batch_roles.1, 0);
        assert!(out.batch_roles.0 > 0);

        let mut cfg = tiny(Algorithm::Prco);
        cfg.train.no_solver_update = true;
        cfg.train.no_observer_update = true;
        assert!(Trainer::new(cfg).is_err());
    }

    #[test]
    fn rollouts_use_the_step_snapshot() {
        let mut t = Trainer::new(tiny(Algorithm::Prco)).unwrap();
        t.step().unwrap();
        let version = t.state.params.version;
        let out = t.step().unwrap();
        let StepRollouts::Trees(trees) = &out.rollouts else { panic!() };
        for s in trees {
            let tr = &s.result;
            assert!(tr.caption_trajs.iter().all(|c| c.policy_version == version));
            assert!(tr.answer_trajs.iter().flatten().all(|a| a.policy_version == version));
        }
        assert_eq!(t.state.params.version, version + 1);
    }

    #[test]
    fn fixed_estimator_scores_captions() {
        let mut cfg = tiny(Algorithm::Prco);
        cfg.train.fixed_utility_estimator = true;
        let mut t = Trainer::new(cfg).unwrap();
        let init = t.state.params.clone();
        t.step().unwrap();
        let out = t.step().unwrap();
        assert_eq!(t.state.fixed_estimator.as_ref(), Some(&init));
        let StepRollouts::Trees(trees) = &out.rollouts else { panic!() };
        for s in trees {
            let util = s.result.utility_trajs.as_ref().unwrap();
            assert!(util.iter().flatten().all(|a| a.policy_version == init.version));
        }
    }

    #[test]
    fn baselines_run() {
        for alg in [Algorithm::Grpo, Algorithm::Dapo] {
            let run = run_training(tiny(alg)).unwrap();
            assert_eq!(run.metrics.records.len(), 3);
            assert!(run.metrics.records[0].eval_accuracy.is_some());
            assert_eq!(run.evals.last().unwrap().step, 3);
        }
    }
}
