use eqmz_core::env::{generate_maze, EnvConfig, MiniPacman};
use eqmz_core::group::{act_on_action, act_on_observation, GroupElement};
use eqmz_core::mcts::{MctsConfig, RngStream};
use eqmz_core::training::{
    batch_loss, loss_and_grads, make_targets, self_play_episode, train, LossWeights, TrainConfig, UnrollTargets,
};
use eqmz_core::worldmodel::{AgentVariant, ModelConfig, WorldModel};
use eqmz_nd::Adam;

const SIDE: usize = 7;

fn env() -> MiniPacman {
    MiniPacman::new(EnvConfig {
        side: SIDE,
        episode_cap: 20,
        ..EnvConfig::default()
    })
    .unwrap()
}

fn small(variant: AgentVariant, seed: u64) -> WorldModel {
    WorldModel::new(
        ModelConfig {
            latent_channels: 2,
            hidden: 8,
            init_seed: seed,
            ..ModelConfig::default()
        },
        variant,
    )
    .unwrap()
}

fn search() -> MctsConfig {
    MctsConfig {
        budget: 4,
        ..MctsConfig::default()
    }
}

fn batch(model: &WorldModel, seed: u64) -> Vec<UnrollTargets> {
    let maze = generate_maze(seed, SIDE).unwrap();
    let traj = self_play_episode(model, &env(), &maze, seed, &search(), 1.0, &mut RngStream::new(seed)).unwrap();
    (0..traj.len().min(4)).map(|t| make_targets(&traj, t, 3, 3, 0.97, 5)).collect()
}

fn rotate(g: GroupElement, t: &UnrollTargets) -> UnrollTargets {
    let permute = |p: &Vec<f64>| {
        let mut out = vec![0.0; p.len()];
        for (a, &x) in p.iter().enumerate() {
            out[act_on_action(g, eqmz_core::group::ActionId(a as u8)).index()] = x;
        }
        out
    };
    UnrollTargets {
        observation: act_on_observation(g, &t.observation),
        actions: t.actions.iter().map(|&a| act_on_action(g, a)).collect(),
        policies: t.policies.iter().map(permute).collect(),
        values: t.values.clone(),
        rewards: t.rewards.clone(),
    }
}

#[test]
fn equivariant_loss_ignores_rotation_of_the_batch() {
    let model = small(AgentVariant::EqMuZero, 2);
    let b = batch(&model, 2);
    let w = LossWeights::default();
    let base = batch_loss(&model, &b, &w).unwrap().total;
    for g in GroupElement::ALL {
        let rotated: Vec<_> = b.iter().map(|t| rotate(g, t)).collect();
        let moved = batch_loss(&model, &rotated, &w).unwrap().total;
        assert!((moved - base).abs() <= 1e-9 * base.abs().max(1.0), "g={g}: {moved} vs {base}");
    }
}

#[test]
fn graph_loss_matches_eval_loss() {
    let model = small(AgentVariant::StdMuZero, 3);
    let b = batch(&model, 3);
    let w = LossWeights::default();
    let (graph, _) = loss_and_grads(&model, &b, &w).unwrap();
    let eval = batch_loss(&model, &b, &w).unwrap();
    assert!((graph.total - eval.total).abs() < 1e-9);
}

fn tiny_train(steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-3,
        unroll: 3,
        n_step: 3,
        batch_size: 8,
        replay_capacity: 50,
        total_steps: steps,
        selfplay_every: 25,
        metrics_every: 10,
        checkpoint_every: steps,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn fixed_batch_from_one_map_is_overfit() {
    let mut model = small(AgentVariant::EqMuZero, 5);
    let b = batch(&model, 5);
    let w = LossWeights::default();
    let start = batch_loss(&model, &b, &w).unwrap().total;
    let mut adam = Adam::new(model.params(), 3e-3);
    for _ in 0..500 {
        let (_, grads) = loss_and_grads(&model, &b, &w).unwrap();
        adam.update(model.params_mut(), &grads);
    }
    let end = batch_loss(&model, &b, &w).unwrap().total;
    assert!(end <= 0.5 * start, "loss {start} -> {end}");
}

#[test]
fn training_is_deterministic() {
    let maze = generate_maze(6, SIDE).unwrap();
    let run = || {
        let out = train(small(AgentVariant::StdMuZero, 6), &env(), std::slice::from_ref(&maze), &search(), &tiny_train(20, 6)).unwrap();
        (out.model.to_checkpoint().to_bytes(), out.metrics)
    };
    assert_eq!(run(), run());
}

#[test]
fn bad_config_is_rejected() {
    let cfg = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    let maze = generate_maze(1, SIDE).unwrap();
    assert!(train(small(AgentVariant::EqMuZero, 1), &env(), &[maze], &search(), &cfg).is_err());
}
