mod common;

use common::*;
use prco_core::advantage::{build_prco_advantages, qualifying_captions, select_caption_index};
use prco_core::policy::Role;
use prco_core::reward::RewardConfig;
use prco_core::rng::rng_for;
use prco_core::rollout::{dynamic_sample, RolloutTree};
use prco_core::synthenv::{Instance, Question, Scene, Slot, Token};
use prco_core::trainer::{Algorithm, Checkpoint, RunConfig, Scale, Trainer};

fn tree_with_rewards(solver_rewards: Vec<Vec<f64>>) -> RolloutTree {
    let model = default_model();
    let g_o = solver_rewards.len();
    let g_s = solver_rewards[0].len();
    let scene = Scene { scene_id: 0, slots: vec![Slot { color: 0, shape: 0 }; 4] };
    RolloutTree {
        instance: Instance { scene, question: Question::count_shape(0), gold: 4 },
        image_visible_solver: true,
        caption_trajs: (0..g_o).map(|_| caption_traj(&model, &[Token::Eoc])).collect(),
        answer_trajs: (0..g_o)
            .map(|_| (0..g_s).map(|_| answer_traj(&model, &[Token::Digit(4), Token::Eos])).collect())
            .collect(),
        utility_trajs: None,
        observer_rewards: solver_rewards.iter().map(|r| r.iter().sum::<f64>() / g_s as f64).collect(),
        solver_rewards,
    }
}

#[test]
fn dynamic_sampling_attempts_follow_the_retry_cap() {
    for m in 0..=25usize {
        let s = dynamic_sample(Ok, |&i: &usize| i < m, 20).unwrap();
        assert_eq!(s.attempts, m.min(20) + 1);
        assert_eq!(s.degenerate, m > 20);
    }
}

#[test]
fn only_the_qualifying_caption_is_selected() {
    let tree = tree_with_rewards(vec![vec![1.0, 1.0], vec![1.0, 0.1], vec![0.0, 0.0], vec![0.1, 0.1]]);
    assert_eq!(qualifying_captions(&tree), vec![1]);
    let mut rng = rng_for(41, &[]);
    for _ in 0..1000 {
        assert_eq!(select_caption_index(&tree, &mut rng), Some(1));
    }
    let flat = tree_with_rewards(vec![vec![1.0, 1.0], vec![0.1, 0.1]]);
    assert!(qualifying_captions(&flat).is_empty());
    assert_eq!(select_caption_index(&flat, &mut rng), None);
}

#[test]
fn two_qualifying_captions_are_selected_evenly() {
    let tree = tree_with_rewards(vec![vec![1.0, 0.0], vec![0.0, 0.0], vec![0.1, 1.0], vec![1.0, 1.0]]);
    let mut rng = rng_for(42, &[]);
    let n = 10_000;
    let first = (0..n).filter(|_| select_caption_index(&tree, &mut rng) == Some(0)).count();
    let freq = first as f64 / n as f64;
    assert!((freq - 0.5).abs() <= 0.02, "frequency {freq}");
}

#[test]
fn prco_batch_has_centered_role_groups() {
    let tree = tree_with_rewards(vec![vec![1.0, 0.0, 1.0], vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]]);
    let batch = build_prco_advantages(&tree, &mut rng_for(43, &[]), 6).unwrap();
    assert_eq!(batch.count(Role::Observer), 4);
    assert_eq!(batch.count(Role::Solver), 3);
    let obs: Vec<f64> = batch.entries.iter().filter(|e| e.role == Role::Observer).map(|e| e.advantage).collect();
    let m = 2.0 / 3.0 / 4.0;
    let expected = [2.0 / 3.0 - m, -m, -m, -m];
    assert!(obs.iter().zip(expected).all(|(a, b)| (a - b).abs() < 1e-12));
    for (group, sum) in batch.group_sums() {
        assert!([6, 7].contains(&group));
        assert!(sum.abs() < 1e-12);
    }

    let degenerate = tree_with_rewards(vec![vec![1.0; 2]; 4]);
    let batch = build_prco_advantages(&degenerate, &mut rng_for(43, &[]), 0).unwrap();
    assert_eq!(batch.count(Role::Solver), 0);
    assert!(batch.entries.iter().all(|e| e.advantage == 0.0));
}

fn tiny(algorithm: Algorithm) -> RunConfig {
    let mut cfg = RunConfig::preset(algorithm, Scale::Desk);
    cfg.train.steps = 6;
    cfg.train.warmup_steps = 2.min(cfg.train.warmup_steps);
    cfg.train.rollout_batch = 4;
    cfg.train.eval_interval = 3;
    cfg.train.eval_size = 40;
    cfg.train.master_seed = 9;
    cfg
}

#[test]
fn identical_configs_give_identical_logs() {
    for alg in [Algorithm::Prco, Algorithm::Grpo, Algorithm::Dapo] {
        let a = prco_core::trainer::run_training(tiny(alg)).unwrap();
        let b = prco_core::trainer::run_training(tiny(alg)).unwrap();
        assert_eq!(a.metrics.to_jsonl(), b.metrics.to_jsonl());
        assert_eq!(a.final_params, b.final_params);
        let mut other = tiny(alg);
        other.train.master_seed = 10;
        let c = prco_core::trainer::run_training(other).unwrap();
        assert_ne!(a.metrics.to_jsonl(), c.metrics.to_jsonl());
    }
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    for alg in [Algorithm::Prco, Algorithm::Grpo] {
        let straight = prco_core::trainer::run_training(tiny(alg)).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let mut first = Trainer::new(tiny(alg)).unwrap();
        for _ in 0..4 {
            first.step().unwrap();
        }
        first.checkpoint().save(dir.path()).unwrap();
        drop(first);
        let resumed = Trainer::from_checkpoint(Checkpoint::load(dir.path()).unwrap()).unwrap().run(|_, _| Ok(())).unwrap();

        assert_eq!(straight.metrics.to_jsonl(), resumed.metrics.to_jsonl());
        assert_eq!(straight.final_params, resumed.final_params);
        assert_eq!(straight.evals, resumed.evals);
    }
}

#[test]
fn zero_steps_returns_initial_params() {
    let mut cfg = tiny(Algorithm::Prco);
    cfg.train.steps = 0;
    cfg.train.warmup_steps = 0;
    let model = prco_core::policy::PolicyModel::new(&cfg.env, &cfg.policy).unwrap();
    let run = prco_core::trainer::run_training(cfg.clone()).unwrap();
    assert!(run.metrics.records.is_empty());
    assert_eq!(run.final_params, model.init_params(cfg.policy.init));
}

#[test]
fn leakage_checker_flag_disables_zeroing() {
    let mut cfg = tiny(Algorithm::Prco);
    cfg.train.leakage_checker_disabled = true;
    let cfg = cfg.normalized().unwrap();
    assert_eq!(cfg.reward, RewardConfig { leakage_enabled: false, ..Default::default() });
}
