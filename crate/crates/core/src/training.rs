//! Self-play, replay, unroll targets, loss and the optimization loop.

use std::collections::VecDeque;
use std::io::{self, Write};

use eqmz_nd::kernels::sorted_sum;
use eqmz_nd::{Adam, Backend, Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{observe, EnvError, MazeMap, MiniPacman, Observation};
use crate::group::ActionId;
use crate::mcts::{run_search, sample_action, MctsConfig, RngStream};
use crate::worldmodel::{ModelError, WorldModel};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("parameters became non-finite at step {step}; last good checkpoint is from step {last_good_step}")]
    Diverged {
        step: usize,
        last_good_step: usize,
        last_good: Box<WorldModel>,
    },
}

/// One played episode. Entry `t` of every sequence belongs to step `t`:
/// `rewards[t]` is the reward received after taking `actions[t]` in
/// `observations[t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub observations: Vec<Observation>,
    pub actions: Vec<ActionId>,
    pub rewards: Vec<f64>,
    pub policies: Vec<Vec<f64>>,
    pub root_values: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    fn is_consistent(&self) -> bool {
        let n = self.actions.len();
        [
            self.observations.len(),
            self.rewards.len(),
            self.policies.len(),
            self.root_values.len(),
        ]
        .iter()
        .all(|&l| l == n)
    }
}

/// Bounded FIFO of trajectories with uniform sampling over positions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Trajectory>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, traj: Trajectory) {
        if traj.is_empty() {
            return;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(traj);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn positions(&self) -> usize {
        self.items.iter().map(Trajectory::len).sum()
    }

    pub fn get(&self, i: usize) -> &Trajectory {
        &self.items[i]
    }

    /// Uniform `(trajectory, index)` pair.
    pub fn sample(&self, rng: &mut impl Rng) -> (usize, usize) {
        let mut k = rng.gen_range(0..self.positions());
        for (i, t) in self.items.iter().enumerate() {
            if k < t.len() {
                return (i, k);
            }
            k -= t.len();
        }
        unreachable!("index within total positions")
    }
}

/// Targets for one unroll of length `K` starting at trajectory step `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnrollTargets {
    pub observation: Observation,
    /// `K` actions; past the episode end the rotation-fixed padding action.
    pub actions: Vec<ActionId>,
    /// `K + 1` policy targets.
    pub policies: Vec<Vec<f64>>,
    /// `K + 1` value targets.
    pub values: Vec<f64>,
    /// `K + 1` reward targets. Entry `k ≥ 1` is the reward of the transition
    /// into unroll state `k`; entry 0 is unused and always 0.
    pub rewards: Vec<f64>,
}

/// Action used to pad unrolls past the episode end: the first non-move
/// action if there is one, so rotating a padded unroll leaves padding alone.
pub fn padding_action(num_actions: usize) -> ActionId {
    if num_actions > 4 {
        ActionId::STAY
    } else {
        ActionId(0)
    }
}

/// n-step value target at step `i`, bootstrapping from the stored root value
/// and treating everything past the episode end as absorbing with value 0.
pub fn value_target(traj: &Trajectory, i: usize, n: usize, discount: f64) -> f64 {
    let len = traj.len();
    if i >= len {
        return 0.0;
    }
    let mut g = 0.0;
    let mut w = 1.0;
    for j in 0..n {
        if i + j >= len {
            return g;
        }
        g += w * traj.rewards[i + j];
        w *= discount;
    }
    if i + n < len {
        g += w * traj.root_values[i + n];
    }
    g
}

pub fn make_targets(traj: &Trajectory, t: usize, k: usize, n: usize, discount: f64, num_actions: usize) -> UnrollTargets {
    assert!(t < traj.len(), "start index {t} outside trajectory of length {}", traj.len());
    let len = traj.len();
    let uniform = vec![1.0 / num_actions as f64; num_actions];
    let pad = padding_action(num_actions);
    let actions = (0..k).map(|j| if t + j < len { traj.actions[t + j] } else { pad }).collect();
    let policies = (0..=k)
        .map(|j| if t + j < len { traj.policies[t + j].clone() } else { uniform.clone() })
        .collect();
    let values = (0..=k).map(|j| value_target(traj, t + j, n, discount)).collect();
    let rewards = (0..=k)
        .map(|j| if j > 0 && t + j - 1 < len { traj.rewards[t + j - 1] } else { 0.0 })
        .collect();
    UnrollTargets {
        observation: traj.observations[t].clone(),
        actions,
        policies,
        values,
        rewards,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub policy: f64,
    pub value: f64,
    pub reward: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            policy: 1.0,
            value: 1.0,
            reward: 1.0,
        }
    }
}

/// Loss terms averaged over a batch. `total` is the weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub reward: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.policy.is_finite() && self.value.is_finite() && self.reward.is_finite()
    }
}

/// Policy, value and reward terms, each summed over the unroll.
pub type LossTerms<T> = (T, T, T);

/// Per-sample loss terms `(policy, value, reward)` built on any backend.
/// Policy uses cross-entropy against the visit distribution; value and
/// reward use squared error.
pub fn sample_loss<B: Backend>(
    model: &WorldModel,
    b: &mut B,
    targets: &UnrollTargets,
) -> Result<LossTerms<B::T>, ModelError> {
    let mut z = model.represent(b, &targets.observation)?;
    let mut lp = Vec::new();
    let mut lv = Vec::new();
    let mut lr = Vec::new();
    for k in 0..targets.policies.len() {
        if k > 0 {
            z = model.dynamics(b, &z, targets.actions[k - 1])?;
            let r = model.reward(b, &z)?;
            let t = b.constant(Tensor::vector(vec![targets.rewards[k]]));
            let d = b.sub(&r, &t)?;
            let sq = b.square(&d);
            lr.push(b.sum(&sq));
        }
        let p = model.policy(b, &z)?;
        let logp = b.ln(&p);
        let target = Tensor::vector(targets.policies[k].clone());
        let ce = b.dot_const(&logp, &target)?;
        lp.push(b.scale(&ce, -1.0));
        let v = model.value(b, &z)?;
        let t = b.constant(Tensor::vector(vec![targets.values[k]]));
        let d = b.sub(&v, &t)?;
        let sq = b.square(&d);
        lv.push(b.sum(&sq));
    }
    let mut fold = |xs: Vec<B::T>| -> Result<B::T, ModelError> {
        let mut acc = match xs.first() {
            Some(x) => x.clone(),
            None => b.constant(Tensor::scalar(0.0)),
        };
        for x in &xs[1.min(xs.len())..] {
            acc = b.add(&acc, x)?;
        }
        Ok(acc)
    };
    Ok((fold(lp)?, fold(lv)?, fold(lr)?))
}

/// Batch loss and its parameter gradients, aligned with the parameter store.
pub fn loss_and_grads(
    model: &WorldModel,
    batch: &[UnrollTargets],
    weights: &LossWeights,
) -> Result<(LossReport, Vec<Tensor>), ModelError> {
    assert!(!batch.is_empty(), "empty batch");
    let scale = 1.0 / batch.len() as f64;
    let mut grads: Vec<Tensor> = model.params().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
    let mut parts = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for targets in batch {
        let mut g = Graph::new();
        let (lp, lv, lr) = sample_loss(model, &mut g, targets)?;
        let wp = g.scale(&lp, weights.policy);
        let wv = g.scale(&lv, weights.value);
        let wr = g.scale(&lr, weights.reward);
        let s = g.add(&wp, &wv).map_err(ModelError::from)?;
        let total = g.add(&s, &wr).map_err(ModelError::from)?;
        parts.0.push(g.value(total).item());
        parts.1.push(g.value(lp).item());
        parts.2.push(g.value(lv).item());
        parts.3.push(g.value(lr).item());
        let sample_grads = g.backward(total).to_dense(model.params());
        for (acc, sg) in grads.iter_mut().zip(sample_grads) {
            for (a, v) in acc.data_mut().iter_mut().zip(sg.data()) {
                *a += v * scale;
            }
        }
    }
    let report = LossReport {
        total: sorted_sum(&parts.0) * scale,
        policy: sorted_sum(&parts.1) * scale,
        value: sorted_sum(&parts.2) * scale,
        reward: sorted_sum(&parts.3) * scale,
    };
    Ok((report, grads))
}

/// Batch loss without gradients.
pub fn batch_loss(model: &WorldModel, batch: &[UnrollTargets], weights: &LossWeights) -> Result<LossReport, ModelError> {
    let mut parts = (Vec::new(), Vec::new(), Vec::new());
    for targets in batch {
        let (lp, lv, lr) = sample_loss(model, &mut eqmz_nd::Eval, targets)?;
        parts.0.push(lp.item());
        parts.1.push(lv.item());
        parts.2.push(lr.item());
    }
    let scale = 1.0 / batch.len() as f64;
    let (p, v, r) = (sorted_sum(&parts.0) * scale, sorted_sum(&parts.1) * scale, sorted_sum(&parts.2) * scale);
    Ok(LossReport {
        total: weights.policy * p + weights.value * v + weights.reward * r,
        policy: p,
        value: v,
        reward: r,
    })
}

/// Plays one episode, acting on search visit counts.
pub fn self_play_episode(
    model: &WorldModel,
    env: &MiniPacman,
    maze: &MazeMap,
    reset_seed: u64,
    config: &MctsConfig,
    temperature: f64,
    rng: &mut RngStream,
) -> Result<Trajectory, TrainError> {
    let mut state = env.reset(maze, reset_seed)?;
    let mut traj = Trajectory {
        observations: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        policies: Vec::new(),
        root_values: Vec::new(),
    };
    while !state.done {
        let obs = observe(&state);
        let res = run_search(model, &obs, config, rng)?;
        let a = sample_action(&res.policy, temperature, rng);
        let out = env.step(&state, a);
        traj.observations.push(obs);
        traj.actions.push(a);
        traj.rewards.push(out.reward);
        traj.policies.push(res.policy);
        traj.root_values.push(res.root_value);
        state = out.state;
    }
    debug_assert!(traj.is_consistent());
    Ok(traj)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub unroll: usize,
    pub n_step: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub weights: LossWeights,
    pub total_steps: usize,
    /// Optimization steps between self-play rounds.
    pub selfplay_every: usize,
    pub episodes_per_round: usize,
    /// Root exploration noise during self-play.
    pub selfplay_noise: bool,
    pub metrics_every: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            unroll: 5,
            n_step: 5,
            batch_size: 32,
            replay_capacity: 500,
            weights: LossWeights::default(),
            total_steps: 2000,
            selfplay_every: 10,
            episodes_per_round: 1,
            selfplay_noise: true,
            metrics_every: 10,
            checkpoint_every: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.unroll < 1 {
            return bad("unroll must be at least 1");
        }
        let w = &self.weights;
        if !(w.policy >= 0.0 && w.value >= 0.0 && w.reward >= 0.0) {
            return bad("loss weights must be nonnegative");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.episodes_per_round == 0 {
            return bad("batch size, replay capacity and episodes per round must be positive");
        }
        if self.selfplay_every == 0 || self.metrics_every == 0 || self.checkpoint_every == 0 {
            return bad("intervals must be positive");
        }
        Ok(())
    }

    /// Acting temperature: 1 for the first half of training, then greedy.
    pub fn temperature_at(&self, step: usize) -> f64 {
        if 2 * step < self.total_steps {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub loss: LossReport,
    pub selfplay_return: f64,
}

pub const METRICS_HEADER: &str = "step,loss_total,loss_p,loss_v,loss_r,selfplay_return";

pub fn write_metrics_csv<W: Write>(mut w: W, rows: &[MetricsRow]) -> io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{:?},{:?},{:?},{:?},{:?}",
            r.step, r.loss.total, r.loss.policy, r.loss.value, r.loss.reward, r.selfplay_return
        )?;
    }
    Ok(())
}

/// A step skipped because its loss was not finite.
#[derive(Clone, Debug, PartialEq)]
pub struct RejectedStep {
    pub step: usize,
    pub loss: LossReport,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: WorldModel,
    pub metrics: Vec<MetricsRow>,
    pub rejected: Vec<RejectedStep>,
}

/// Alternates self-play on `maps` with optimizer steps on replayed unrolls.
pub fn train(
    mut model: WorldModel,
    env: &MiniPacman,
    maps: &[MazeMap],
    mcts: &MctsConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    mcts.validate().map_err(|e| TrainError::Config(e.to_string()))?;
    if maps.is_empty() {
        return Err(TrainError::Config("no training maps".into()));
    }
    let mut search = mcts.clone();
    search.noise.enabled = config.selfplay_noise;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(model.params(), config.learning_rate);
    let mut replay = ReplayBuffer::new(config.replay_capacity);
    let mut metrics = Vec::new();
    let mut rejected = Vec::new();
    let mut last_good = (0, model.clone());
    let mut episodes = 0usize;
    let mut recent_return = 0.0;
    let na = model.num_actions();
    for step in 0..config.total_steps {
        if step % config.selfplay_every == 0 {
            let mut returns = Vec::with_capacity(config.episodes_per_round);
            for _ in 0..config.episodes_per_round {
                let maze = &maps[episodes % maps.len()];
                episodes += 1;
                let mut stream = RngStream::new(rng.gen());
                let traj = self_play_episode(&model, env, maze, rng.gen(), &search, config.temperature_at(step), &mut stream)?;
                returns.push(traj.total_reward());
                replay.push(traj);
            }
            recent_return = sorted_sum(&returns) / returns.len() as f64;
        }
        let batch: Vec<UnrollTargets> = (0..config.batch_size)
            .map(|_| {
                let (i, t) = replay.sample(&mut rng);
                make_targets(replay.get(i), t, config.unroll, config.n_step, mcts.discount, na)
            })
            .collect();
        let (loss, grads) = loss_and_grads(&model, &batch, &config.weights)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            rejected.push(RejectedStep { step, loss });
            continue;
        }
        adam.update(model.params_mut(), &grads);
        if !model.params().all_finite() {
            return Err(TrainError::Diverged {
                step,
                last_good_step: last_good.0,
                last_good: Box::new(last_good.1),
            });
        }
        if step % config.metrics_every == 0 || step + 1 == config.total_steps {
            metrics.push(MetricsRow {
                step,
                loss,
                selfplay_return: recent_return,
            });
        }
        if (step + 1) % config.checkpoint_every == 0 {
            last_good = (step + 1, model.clone());
        }
    }
    Ok(TrainOutcome {
        model,
        metrics,
        rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_maze, EnvConfig};
    use crate::worldmodel::{AgentVariant, ModelConfig};

    fn blank_obs() -> Observation {
        Observation::from_fn(5, 5, |_, _| [0.0; 4])
    }

    fn hand_traj(rewards: &[f64], root_values: &[f64]) -> Trajectory {
        let n = rewards.len();
        Trajectory {
            observations: vec![blank_obs(); n],
            actions: (0..n).map(|i| ActionId((i % 4) as u8)).collect(),
            rewards: rewards.to_vec(),
            policies: vec![vec![0.2; 5]; n],
            root_values: root_values.to_vec(),
        }
    }

    #[test]
    fn terminal_step_n1_is_final_reward() {
        let t = hand_traj(&[1.0, 2.0, 7.0], &[9.0, 9.0, 9.0]);
        assert_eq!(value_target(&t, 2, 1, 0.9), 7.0);
    }

    #[test]
    fn zero_discount_is_immediate_reward() {
        let t = hand_traj(&[1.0, 2.0, 7.0], &[9.0, 9.0, 9.0]);
        for i in 0..3 {
            assert_eq!(value_target(&t, i, 3, 0.0), t.rewards[i]);
        }
    }

    #[test]
    fn three_step_targets_by_hand() {
        let t = hand_traj(&[1.0, 2.0, 4.0], &[10.0, 20.0, 40.0]);
        let tg = make_targets(&t, 0, 2, 2, 0.5, 5);
        // v0 = 1 + 0.5·2 + 0.25·40, v1 = 2 + 0.5·4 (terminal), v2 = 4
        assert_eq!(tg.values, vec![12.0, 4.0, 4.0]);
        assert_eq!(tg.rewards, vec![0.0, 1.0, 2.0]);
        assert_eq!(tg.actions, vec![ActionId(0), ActionId(1)]);
    }

    #[test]
    fn padding_is_absorbing() {
        let t = hand_traj(&[1.0, 3.0], &[0.0, 0.0]);
        let tg = make_targets(&t, 1, 3, 5, 1.0, 5);
        assert_eq!(tg.actions, vec![ActionId(1), ActionId::STAY, ActionId::STAY]);
        assert_eq!(tg.rewards, vec![0.0, 3.0, 0.0, 0.0]);
        assert_eq!(tg.values, vec![3.0, 0.0, 0.0, 0.0]);
        assert_eq!(tg.policies[2], vec![0.2; 5]);
        assert_eq!(padding_action(4), ActionId(0));
    }

    #[test]
    fn replay_respects_capacity_and_is_deterministic() {
        let mut buf = ReplayBuffer::new(2);
        for n in 1..=3 {
            buf.push(hand_traj(&vec![0.0; n], &vec![0.0; n]));
        }
        assert_eq!(buf.len(), 2);
        assert_eq!(buf.positions(), 5);
        let draw = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| buf.sample(&mut r)).collect::<Vec<_>>()
        };
        assert_eq!(draw(1), draw(1));
    }

    #[test]
    fn replay_sampling_is_uniform() {
        let mut buf = ReplayBuffer::new(10);
        for n in [1usize, 2, 3, 4] {
            buf.push(hand_traj(&vec![0.0; n], &vec![0.0; n]));
        }
        let cells = buf.positions();
        let mut counts = vec![0usize; cells];
        let mut r = ChaCha8Rng::seed_from_u64(7);
        let draws = 20_000;
        for _ in 0..draws {
            let (i, t) = buf.sample(&mut r);
            let offset: usize = (0..i).map(|j| buf.get(j).len()).sum();
            counts[offset + t] += 1;
        }
        let expect = draws as f64 / cells as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        // 9 degrees of freedom, 0.999 quantile 27.88
        assert!(chi2 < 27.88, "chi2 {chi2}");
    }

    #[test]
    fn zero_weights_zero_loss() {
        let model = WorldModel::new(
            ModelConfig {
                latent_channels: 2,
                hidden: 4,
                ..ModelConfig::default()
            },
            AgentVariant::EqMuZero,
        )
        .unwrap();
        let t = hand_traj(&[1.0, 2.0], &[0.5, 0.5]);
        let batch = vec![make_targets(&t, 0, 2, 2, 0.9, 5)];
        let w = LossWeights {
            policy: 0.0,
            value: 0.0,
            reward: 0.0,
        };
        let (rep, grads) = loss_and_grads(&model, &batch, &w).unwrap();
        assert_eq!(rep.total, 0.0);
        assert!(grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
        assert_eq!(batch_loss(&model, &batch, &w).unwrap().total, 0.0);
    }

    #[test]
    fn self_play_is_deterministic_and_valid() {
        let env = MiniPacman::new(EnvConfig {
            side: 7,
            episode_cap: 12,
            ..EnvConfig::default()
        })
        .unwrap();
        let maze = generate_maze(2, 7).unwrap();
        let model = WorldModel::new(
            ModelConfig {
                latent_channels: 2,
                hidden: 4,
                ..ModelConfig::default()
            },
            AgentVariant::EqMuZero,
        )
        .unwrap();
        let cfg = MctsConfig {
            budget: 1,
            ..MctsConfig::default()
        };
        let play = || self_play_episode(&model, &env, &maze, 5, &cfg, 0.0, &mut RngStream::new(1)).unwrap();
        let a = play();
        assert!(a.is_consistent() && !a.is_empty() && a.len() <= 12);
        assert_eq!(a, play());
        assert_eq!(a.total_reward(), a.rewards.iter().sum::<f64>());
    }

    #[test]
    fn metrics_csv_header() {
        let mut out = Vec::new();
        write_metrics_csv(
            &mut out,
            &[MetricsRow {
                step: 3,
                loss: LossReport {
                    total: 1.5,
                    policy: 1.0,
                    value: 0.25,
                    reward: 0.25,
                },
                selfplay_return: -2.0,
            }],
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "step,loss_total,loss_p,loss_v,loss_r,selfplay_return\n3,1.5,1.0,0.25,0.25,-2.0\n"
        );
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            unroll: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let cfg = TrainConfig {
            total_steps: 10,
            ..TrainConfig::default()
        };
        assert_eq!((cfg.temperature_at(4), cfg.temperature_at(5)), (1.0, 0.0));
    }
}
