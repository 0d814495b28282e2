//! Rollout orchestration: the Observer→Solver tree used by the dual-role
//! trainer, flat answer groups for the single-role baselines, and the
//! retry loop that skips degenerate groups.

use serde::Serialize;

use crate::error::{config_err, Result};
use crate::policy::{describe, sample_sequence, PolicyModel, PolicyParams, Role, Trajectory};
use crate::rng::Rng;
use crate::synthenv::{Instance, InstanceRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutTree {
    pub instance: Instance,
    pub image_visible_solver: bool,
    pub caption_trajs: Vec<Trajectory>,
    /// `answer_trajs[k]` were sampled conditioned on `caption_trajs[k]`.
    pub answer_trajs: Vec<Vec<Trajectory>>,
    /// Answers drawn from a frozen estimator policy, used only to score
    /// captions. `None` means the training answers score the captions.
    pub utility_trajs: Option<Vec<Vec<Trajectory>>>,
    pub solver_rewards: Vec<Vec<f64>>,
    pub observer_rewards: Vec<f64>,
}

impl RolloutTree {
    pub fn g_o(&self) -> usize {
        self.caption_trajs.len()
    }

    pub fn g_s(&self) -> usize {
        self.answer_trajs.first().map_or(0, Vec::len)
    }

    pub fn to_json_line(&self, model: &PolicyModel) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            instance: InstanceRecord,
            image_visible_solver: bool,
            captions: Vec<String>,
            answers: Vec<Vec<String>>,
            solver_rewards: &'a [Vec<f64>],
            observer_rewards: &'a [f64],
        }
        let rec = Record {
            instance: InstanceRecord::from(&self.instance),
            image_visible_solver: self.image_visible_solver,
            captions: self.caption_trajs.iter().map(|t| describe(model, &t.tokens)).collect(),
            answers: self
                .answer_trajs
                .iter()
                .map(|g| g.iter().map(|t| describe(model, &t.tokens)).collect())
                .collect(),
            solver_rewards: &self.solver_rewards,
            observer_rewards: &self.observer_rewards,
        };
        serde_json::to_string(&rec).expect("tree record serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatGroup {
    pub instance: Instance,
    pub answer_trajs: Vec<Trajectory>,
    pub rewards: Vec<f64>,
}

impl FlatGroup {
    /// All rewards equal: group-relative advantages carry no signal.
    pub fn is_degenerate(&self) -> bool {
        self.rewards.windows(2).all(|w| w[0] == w[1])
    }
}

#[allow(clippy::too_many_arguments)]
pub fn rollout_prco(
    model: &PolicyModel,
    params: &PolicyParams,
    instance: &Instance,
    g_o: usize,
    g_s: usize,
    image_visible_solver: bool,
    temperature: f64,
    rng: &mut Rng,
) -> Result<RolloutTree> {
    rollout_prco_with_estimator(model, params, None, instance, g_o, g_s, image_visible_solver, temperature, rng)
}

/// Like [`rollout_prco`], but when `estimator` is given each caption also
/// receives `g_s` utility answers sampled from the estimator params.
#[allow(clippy::too_many_arguments)]
pub fn rollout_prco_with_estimator(
    model: &PolicyModel,
    params: &PolicyParams,
    estimator: Option<&PolicyParams>,
    instance: &Instance,
    g_o: usize,
    g_s: usize,
    image_visible_solver: bool,
    temperature: f64,
    rng: &mut Rng,
) -> Result<RolloutTree> {
    if g_o < 2 || g_s < 2 {
        return config_err(format!("group sizes must be >= 2, got G_O={g_o}, G_S={g_s}"));
    }
    let mut caption_trajs = Vec::with_capacity(g_o);
    let mut answer_trajs = Vec::with_capacity(g_o);
    let mut utility_trajs = estimator.map(|_| Vec::with_capacity(g_o));
    for k in 0..g_o {
        let caption = sample_sequence(model, params, Role::Observer, instance, true, None, temperature, rng)?;
        let mut answers = Vec::with_capacity(g_s);
        for _ in 0..g_s {
            let mut a = sample_sequence(
                model,
                params,
                Role::Solver,
                instance,
                image_visible_solver,
                Some(&caption.tokens),
                temperature,
                rng,
            )?;
            a.caption_index = Some(k);
            answers.push(a);
        }
        if let (Some(est), Some(util)) = (estimator, utility_trajs.as_mut()) {
            let mut group = Vec::with_capacity(g_s);
            for _ in 0..g_s {
                let mut a = sample_sequence(
                    model,
                    est,
                    Role::Solver,
                    instance,
                    image_visible_solver,
                    Some(&caption.tokens),
                    temperature,
                    rng,
                )?;
                a.caption_index = Some(k);
                group.push(a);
            }
            util.push(group);
        }
        caption_trajs.push(caption);
        answer_trajs.push(answers);
    }
    Ok(RolloutTree {
        instance: instance.clone(),
        image_visible_solver,
        caption_trajs,
        answer_trajs,
        utility_trajs,
        solver_rewards: vec![vec![0.0; g_s]; g_o],
        observer_rewards: vec![0.0; g_o],
    })
}

/// `g` Solver answers conditioned directly on the image and question.
pub fn rollout_flat(
    model: &PolicyModel,
    params: &PolicyParams,
    instance: &Instance,
    g: usize,
    temperature: f64,
    rng: &mut Rng,
) -> Result<FlatGroup> {
    if g < 2 {
        return config_err(format!("group size must be >= 2, got {g}"));
    }
    let answer_trajs = (0..g)
        .map(|_| sample_sequence(model, params, Role::Solver, instance, true, Some(&[]), temperature, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(FlatGroup { instance: instance.clone(), answer_trajs, rewards: vec![0.0; g] })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sampled<T> {
    pub result: T,
    /// Attempts consumed, including the accepted one.
    pub attempts: usize,
    /// Set when every attempt was degenerate.
    pub degenerate: bool,
}

/// Draws up to `1 + max_retries` results from `attempt(i)` (a fresh instance
/// per call) and returns the first that is not `degenerate`, or the last one
/// flagged as degenerate.
pub fn dynamic_sample<T>(
    mut attempt: impl FnMut(usize) -> Result<T>,
    degenerate: impl Fn(&T) -> bool,
    max_retries: usize,
) -> Result<Sampled<T>> {
    let mut i = 0;
    loop {
        let result = attempt(i)?;
        let bad = degenerate(&result);
        if !bad || i == max_retries {
            return Ok(Sampled { result, attempts: i + 1, degenerate: bad });
        }
        i += 1;
    }
}
