//! Group-relative advantages.

use rand::Rng as _;

use crate::error::{config_err, Result};
use crate::policy::{Role, Trajectory};
use crate::rng::Rng;
use crate::rollout::{FlatGroup, RolloutTree};

#[derive(Debug, Clone, Copy)]
pub struct AdvEntry<'a> {
    pub traj: &'a Trajectory,
    pub advantage: f64,
    pub role: Role,
    pub group: usize,
}

#[derive(Debug, Clone, Default)]
pub struct AdvantageBatch<'a> {
    pub entries: Vec<AdvEntry<'a>>,
}

impl<'a> AdvantageBatch<'a> {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn extend(&mut self, other: AdvantageBatch<'a>) {
        self.entries.extend(other.entries);
    }

    pub fn retain_role(&mut self, keep: impl Fn(Role) -> bool) {
        self.entries.retain(|e| keep(e.role));
    }

    pub fn count(&self, role: Role) -> usize {
        self.entries.iter().filter(|e| e.role == role).count()
    }

    /// Sum of advantages per group id, in ascending group order.
    pub fn group_sums(&self) -> Vec<(usize, f64)> {
        let mut sums: std::collections::BTreeMap<usize, f64> = Default::default();
        for e in &self.entries {
            *sums.entry(e.group).or_default() += e.advantage;
        }
        sums.into_iter().collect()
    }

    pub fn num_tokens(&self) -> usize {
        self.entries.iter().map(|e| e.traj.len()).sum()
    }
}

fn all_equal(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] == w[1])
}

fn check_group(rewards: &[f64]) -> Result<()> {
    if rewards.len() < 2 {
        return config_err(format!("advantage groups need >= 2 members, got {}", rewards.len()));
    }
    Ok(())
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// `(r_i − mean) / (std + eps_norm)` with the population std.
pub fn zscore_advantages(rewards: &[f64], eps_norm: f64) -> Result<Vec<f64>> {
    check_group(rewards)?;
    if !(eps_norm > 0.0) {
        return config_err(format!("eps_norm must be positive, got {eps_norm}"));
    }
    if all_equal(rewards) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let m = mean(rewards);
    let denom = population_std(rewards) + eps_norm;
    Ok(rewards.iter().map(|r| (r - m) / denom).collect())
}

/// `r_i − mean`.
pub fn centered_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    check_group(rewards)?;
    if all_equal(rewards) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let m = mean(rewards);
    Ok(rewards.iter().map(|r| r - m).collect())
}

/// Captions whose answer group has non-zero reward variance.
pub fn qualifying_captions(tree: &RolloutTree) -> Vec<usize> {
    tree.solver_rewards
        .iter()
        .enumerate()
        .filter(|(_, r)| !all_equal(r))
        .map(|(k, _)| k)
        .collect()
}

/// Uniform draw over qualifying captions; `None` when none qualifies.
pub fn select_caption_index(tree: &RolloutTree, rng: &mut Rng) -> Option<usize> {
    let q = qualifying_captions(tree);
    if q.is_empty() {
        None
    } else {
        Some(q[rng.gen_range(0..q.len())])
    }
}

/// Observer entries for every caption (group `group_base`), Solver entries
/// for the selected caption's answers (group `group_base + 1`).
pub fn build_prco_advantages<'a>(
    tree: &'a RolloutTree,
    rng: &mut Rng,
    group_base: usize,
) -> Result<AdvantageBatch<'a>> {
    let mut batch = AdvantageBatch::default();
    let obs = centered_advantages(&tree.observer_rewards)?;
    for (traj, advantage) in tree.caption_trajs.iter().zip(obs) {
        batch.entries.push(AdvEntry { traj, advantage, role: Role::Observer, group: group_base });
    }
    if let Some(k) = select_caption_index(tree, rng) {
        let adv = centered_advantages(&tree.solver_rewards[k])?;
        for (traj, advantage) in tree.answer_trajs[k].iter().zip(adv) {
            batch.entries.push(AdvEntry { traj, advantage, role: Role::Solver, group: group_base + 1 });
        }
    }
    Ok(batch)
}

/// z-scored Solver entries for a flat group.
pub fn build_flat_advantages(group: &FlatGroup, eps_norm: f64, group_id: usize) -> Result<AdvantageBatch<'_>> {
    let adv = zscore_advantages(&group.rewards, eps_norm)?;
    Ok(AdvantageBatch {
        entries: group
            .answer_trajs
            .iter()
            .zip(adv)
            .map(|(traj, advantage)| AdvEntry { traj, advantage, role: Role::Solver, group: group_id })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zscore_examples() {
        assert_eq!(zscore_advantages(&[0.3, 0.3, 0.3], 1e-6).unwrap(), vec![0.0; 3]);
        let a = zscore_advantages(&[1.0, 0.0], 1e-6).unwrap();
        let expected = 0.5 / (0.5 + 1e-6);
        assert!((a[0] - expected).abs() < 1e-12 && (a[1] + expected).abs() < 1e-12);
        let b = zscore_advantages(&[1.0, 1.0, 0.0, 0.0], 1e-6).unwrap();
        assert!(b[0] > 0.0 && b[1] > 0.0 && b[2] < 0.0 && b[3] < 0.0);
        assert!(b.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn centered_examples() {
        assert_eq!(centered_advantages(&[1.0, 0.0, 0.0, 1.0]).unwrap(), vec![0.5, -0.5, -0.5, 0.5]);
        assert_eq!(centered_advantages(&[0.1; 8]).unwrap(), vec![0.0; 8]);
    }

    #[test]
    fn small_groups_rejected() {
        assert!(zscore_advantages(&[1.0], 1e-6).is_err());
        assert!(centered_advantages(&[]).is_err());
        assert!(zscore_advantages(&[1.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn population_std_of_pair() {
        assert_eq!(population_std(&[1.0, 0.0]), 0.5);
    }
}
