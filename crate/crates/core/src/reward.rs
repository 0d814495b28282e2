//! Role-specific rewards: the Solver is paid for a correct, well-formed
//! answer; the Observer is paid the downstream verifier success rate of the
//! answers conditioned on its caption, zeroed when the caption leaks a digit.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::policy::{Trajectory, Vocab};
use crate::rollout::{FlatGroup, RolloutTree};
use crate::synthenv::{format_score, verify, Question, Token};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Weight of correctness against format compliance.
    pub lambda: f64,
    pub leakage_enabled: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { lambda: 0.9, leakage_enabled: true }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return config_err(format!("lambda must be in [0, 1], got {}", self.lambda));
        }
        Ok(())
    }
}

pub fn solver_reward(answer: &[Token], gold: u8, cfg: &RewardConfig) -> f64 {
    cfg.lambda * f64::from(verify(answer, gold)) + (1.0 - cfg.lambda) * f64::from(format_score(answer))
}

/// 1 iff the caption contains any digit token.
pub fn leakage_indicator(_question: &Question, caption: &[Token]) -> u8 {
    u8::from(caption.iter().any(|t| t.is_digit()))
}

fn verifier_mean(vocab: &Vocab, answers: &[Trajectory], gold: u8) -> f64 {
    let hits: u32 = answers.iter().map(|a| u32::from(verify(&vocab.decode(&a.tokens), gold))).sum();
    f64::from(hits) / answers.len() as f64
}

/// Utility reward of caption `k`: `(1 − leak) · mean_g V(â_{k,g}, a)`.
pub fn observer_reward(vocab: &Vocab, tree: &RolloutTree, k: usize, cfg: &RewardConfig) -> f64 {
    let inst = &tree.instance;
    let leak = if cfg.leakage_enabled {
        leakage_indicator(&inst.question, &vocab.decode(&tree.caption_trajs[k].tokens))
    } else {
        0
    };
    if leak == 1 {
        return 0.0;
    }
    let answers = match &tree.utility_trajs {
        Some(util) => &util[k],
        None => &tree.answer_trajs[k],
    };
    verifier_mean(vocab, answers, inst.gold)
}

/// Fills `solver_rewards` and `observer_rewards`.
pub fn score_tree(vocab: &Vocab, tree: &mut RolloutTree, cfg: &RewardConfig) {
    let gold = tree.instance.gold;
    tree.solver_rewards = tree
        .answer_trajs
        .iter()
        .map(|g| g.iter().map(|a| solver_reward(&vocab.decode(&a.tokens), gold, cfg)).collect())
        .collect();
    tree.observer_rewards = (0..tree.g_o()).map(|k| observer_reward(vocab, tree, k, cfg)).collect();
}

pub fn score_flat(vocab: &Vocab, group: &mut FlatGroup, cfg: &RewardConfig) {
    let gold = group.instance.gold;
    group.rewards = group
        .answer_trajs
        .iter()
        .map(|a| solver_reward(&vocab.decode(&a.tokens), gold, cfg))
        .collect();
}
