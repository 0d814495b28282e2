#![allow(dead_code)]

use prco_core::optimize::Aggregation;
use prco_core::policy::{logprob_and_grad, InitKind, Matrix, PolicyConfig, PolicyModel, PolicyParams, Role, Trajectory};
use prco_core::rng::Rng;
use prco_core::rollout::RolloutTree;
use prco_core::synthenv::{generate_instance, EnvConfig, Instance, Question, Scene, Slot, Token};
use rand::Rng as _;

/// Two slots, two colors, two shapes: 13 tokens, small enough for
/// coordinate-wise finite differences over the whole weight matrix.
pub fn small_model() -> PolicyModel {
    let env = EnvConfig { slots: 2, colors: 2, shapes: 2, ..Default::default() };
    let policy = PolicyConfig { init: InitKind::Zero, observer_max_len: 5, solver_max_len: 3 };
    PolicyModel::new(&env, &policy).unwrap()
}

pub fn default_model() -> PolicyModel {
    PolicyModel::new(&EnvConfig::default(), &PolicyConfig::default()).unwrap()
}

pub fn random_params(model: &PolicyModel, scale: f64, rng: &mut Rng) -> PolicyParams {
    let mut p = model.zero_params();
    for w in p.weights.as_mut_slice() {
        *w = rng.gen_range(-scale..scale);
    }
    p
}

pub fn perturbed(params: &PolicyParams, scale: f64, rng: &mut Rng) -> PolicyParams {
    let mut p = params.clone();
    for w in p.weights.as_mut_slice() {
        *w += rng.gen_range(-scale..scale);
    }
    p.version += 1;
    p
}

pub fn instance(model: &PolicyModel, rng: &mut Rng) -> Instance {
    generate_instance(rng.gen(), &model.env).unwrap()
}

/// A mix of Observer captions and Solver answers conditioned on them.
pub fn sample_trajectories(
    model: &PolicyModel,
    params: &PolicyParams,
    count: usize,
    rng: &mut Rng,
) -> Vec<Trajectory> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let inst = instance(model, rng);
        let caption = prco_core::policy::sample_sequence(model, params, Role::Observer, &inst, true, None, 1.0, rng)
            .unwrap();
        let visible = rng.gen_bool(0.5);
        let answer =
            prco_core::policy::sample_sequence(model, params, Role::Solver, &inst, visible, Some(&caption.tokens), 1.0, rng)
                .unwrap();
        out.push(caption);
        if out.len() < count {
            out.push(answer);
        }
    }
    out
}

/// A Solver trajectory holding only tokens (for reward-level tests).
pub fn answer_traj(model: &PolicyModel, tokens: &[Token]) -> Trajectory {
    Trajectory {
        role: Role::Solver,
        tokens: model.vocab.encode(tokens).unwrap(),
        contexts: Vec::new(),
        behavior_logprobs: Vec::new(),
        temperature: 1.0,
        truncated: false,
        policy_version: 0,
        instance_id: 0,
        caption_index: None,
    }
}

pub fn caption_traj(model: &PolicyModel, tokens: &[Token]) -> Trajectory {
    Trajectory { role: Role::Observer, ..answer_traj(model, tokens) }
}

/// Central differences of `f` over every weight, with step `h`.
pub fn numeric_grad(params: &PolicyParams, h: f64, mut f: impl FnMut(&PolicyParams) -> f64) -> Vec<f64> {
    let mut p = params.clone();
    let n = p.weights.as_slice().len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let w0 = p.weights.as_slice()[i];
        p.weights.as_mut_slice()[i] = w0 + h;
        let up = f(&p);
        p.weights.as_mut_slice()[i] = w0 - h;
        let down = f(&p);
        p.weights.as_mut_slice()[i] = w0;
        out.push((up - down) / (2.0 * h));
    }
    out
}

/// Largest coordinate error relative to the larger of the two gradients'
/// max-norms (coordinates that are zero in both do not inflate the ratio).
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().chain(numeric).fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max) / scale
}

pub struct SurrogateCase {
    pub params: PolicyParams,
    pub old: PolicyParams,
    pub trajs: Vec<Trajectory>,
    pub advantages: Vec<f64>,
}

impl SurrogateCase {
    /// Random params, a nearby behavior policy, trajectories sampled from the
    /// behavior policy and random advantages.
    pub fn random(model: &PolicyModel, rng: &mut Rng) -> Self {
        let params = random_params(model, 1.0, rng);
        let old = perturbed(&params, 0.3, rng);
        let n = rng.gen_range(2..=6);
        let trajs = sample_trajectories(model, &old, n, rng);
        let advantages = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Self { params, old, trajs, advantages }
    }

    pub fn batch(&self) -> prco_core::advantage::AdvantageBatch<'_> {
        prco_core::advantage::AdvantageBatch {
            entries: self
                .trajs
                .iter()
                .zip(&self.advantages)
                .enumerate()
                .map(|(i, (traj, &advantage))| prco_core::advantage::AdvEntry {
                    traj,
                    advantage,
                    role: traj.role,
                    group: i % 2,
                })
                .collect(),
        }
    }

    /// Smallest distance from any token ratio (under `params`) to a clip
    /// boundary.
    pub fn boundary_margin(&self, model: &PolicyModel, eps_low: f64, eps_high: f64) -> f64 {
        let mut m = f64::INFINITY;
        for t in &self.trajs {
            let lps = prco_core::policy::token_logprobs(model, &self.params, t);
            for (lp, old) in lps.iter().zip(&t.behavior_logprobs) {
                let r = (lp - old).exp();
                m = m.min((r - (1.0 - eps_low)).abs()).min((r - (1.0 + eps_high)).abs());
            }
        }
        m
    }
}

/// Direct REINFORCE gradient of the negated aggregate `Σ w·A·log π`.
pub fn reinforce_grad(model: &PolicyModel, case: &SurrogateCase, agg: Aggregation) -> Matrix {
    let params = &case.params;
    let mut out = Matrix::zeros(params.weights.rows(), params.weights.cols());
    let total_tokens: usize = case.trajs.iter().map(|t| t.len()).sum();
    for (t, &a) in case.trajs.iter().zip(&case.advantages) {
        let w = match agg {
            Aggregation::TokenMean => 1.0 / total_tokens as f64,
            Aggregation::SequenceMeanOfMeans => 1.0 / (case.trajs.len() * t.len()) as f64,
        };
        let (_, g) = logprob_and_grad(model, params, t);
        out.add_scaled(&g, -w * a);
    }
    out
}

/// One-caption tree over a four-slot scene, for reward-level checks.
pub fn tree_for(model: &PolicyModel, caption: &[Token], answers: &[Vec<Token>], gold: u8) -> RolloutTree {
    let scene = Scene { scene_id: 0, slots: vec![Slot { color: 0, shape: 0 }; 4] };
    RolloutTree {
        instance: Instance { scene, question: Question::count_color(0), gold },
        image_visible_solver: true,
        caption_trajs: vec![caption_traj(model, caption)],
        answer_trajs: vec![answers.iter().map(|a| answer_traj(model, a)).collect()],
        utility_trajs: None,
        solver_rewards: vec![vec![0.0; answers.len()]],
        observer_rewards: vec![0.0],
    }
}

/// Subsets of size `k` from `n` items (the first `c` correct) containing at
/// least one correct item, as a fraction of all such subsets.
pub fn enumerated_pass_at_k(n: usize, c: usize, k: usize) -> f64 {
    let (mut hit, mut total) = (0u64, 0u64);
    for mask in 0u32..1 << n {
        if mask.count_ones() as usize != k {
            continue;
        }
        total += 1;
        hit += u64::from(mask & ((1 << c) - 1) != 0);
    }
    hit as f64 / total as f64
}
