use eqmz_core::env::{generate_maze, observe, EnvConfig, MiniPacman, Observation};
use eqmz_core::group::{act_on_action, act_on_observation, ActionId, GroupElement};
use eqmz_core::mcts::{
    compute_return, rng_transport, run_search, search_from_root, Expanded, MctsConfig, RngStream, SearchModel,
};
use eqmz_core::worldmodel::{AgentVariant, ModelConfig, ModelError, WorldModel};
use proptest::prelude::*;

/// Latent is the action path; every output is a fixed function of it.
struct Chain;

impl SearchModel for Chain {
    type Latent = Vec<u8>;
    fn num_actions(&self) -> usize {
        3
    }
    fn expand(&self, parent: &Vec<u8>, a: ActionId) -> Result<Expanded<Vec<u8>>, ModelError> {
        let mut latent = parent.clone();
        latent.push(a.0);
        let h = latent.iter().fold(7u64, |h, &x| h.wrapping_mul(31).wrapping_add(x as u64));
        Ok(Expanded {
            latent,
            reward: (h % 5) as f64 - 2.0,
            prior: vec![0.2, 0.3, 0.5],
            value: (h % 3) as f64,
        })
    }
}

fn root() -> Expanded<Vec<u8>> {
    Expanded {
        latent: vec![],
        reward: 0.0,
        prior: vec![0.2, 0.3, 0.5],
        value: 0.0,
    }
}

fn obs(seed: u64) -> Observation {
    let env = MiniPacman::new(EnvConfig {
        side: 6,
        ..EnvConfig::default()
    })
    .unwrap();
    observe(&env.reset(&generate_maze(seed, 6).unwrap(), seed).unwrap())
}

proptest! {
    #[test]
    fn visits_count_simulations(budget in 1usize..60, seed in any::<u64>()) {
        let cfg = MctsConfig { budget, ..MctsConfig::default() };
        let r = search_from_root(&Chain, root(), &cfg, &mut RngStream::new(seed)).unwrap();
        prop_assert_eq!(r.visits.iter().sum::<u32>() as usize, budget);
        prop_assert_eq!(r.trace.len(), budget);
        prop_assert!((r.policy.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (path, i) in r.tree.paths() {
            let node = &r.tree.nodes[i];
            let children: u64 = node.stats.n.iter().map(|&n| n as u64).sum();
            // every non-root node was created by one visit and passed on the rest
            if !path.is_empty() {
                let parent = r.tree.lookup(&path[..path.len() - 1]).unwrap();
                prop_assert_eq!(parent.stats.n[path.last().unwrap().index()] as u64, children + 1);
            }
        }
    }

    #[test]
    fn q_is_a_mean_of_bounded_returns(budget in 1usize..40, seed in any::<u64>()) {
        let gamma = 0.9;
        let cfg = MctsConfig { budget, discount: gamma, ..MctsConfig::default() };
        let r = search_from_root(&Chain, root(), &cfg, &mut RngStream::new(seed)).unwrap();
        // |r| <= 2 and 0 <= v <= 2 bound every discounted return by 2 / (1 - gamma)
        let bound = 2.0 / (1.0 - gamma);
        for node in &r.tree.nodes {
            prop_assert!(node.stats.q.iter().all(|q| q.abs() <= bound + 1e-12));
        }
    }

    #[test]
    fn return_matches_power_sum(rewards in proptest::collection::vec(-3.0f64..3.0, 0..8), v in -3.0f64..3.0, gamma in 0.0f64..1.0) {
        let direct: f64 = rewards.iter().enumerate().map(|(j, r)| gamma.powi(j as i32) * r).sum::<f64>()
            + gamma.powi(rewards.len() as i32) * v;
        prop_assert!((compute_return(&rewards, v, gamma) - direct).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn search_on_rotated_input_is_rotated_search(seed in any::<u64>(), k in 0i64..4) {
        let model = WorldModel::new(
            ModelConfig { latent_channels: 2, hidden: 6, init_seed: seed, ..ModelConfig::default() },
            AgentVariant::EqMuZero,
        ).unwrap();
        let g = GroupElement::new(k);
        let o = obs(seed);
        let cfg = MctsConfig { budget: 12, ..MctsConfig::default() };
        let a = run_search(&model, &o, &cfg, &mut RngStream::new(seed)).unwrap();
        let b = run_search(&model, &act_on_observation(g, &o), &cfg, &mut rng_transport(g, RngStream::new(seed))).unwrap();
        for x in 0..5u8 {
            prop_assert_eq!(a.visits[x as usize], b.visits[act_on_action(g, ActionId(x)).index()]);
        }
        prop_assert_eq!(a.root_value.to_bits(), b.root_value.to_bits());
    }
}

#[test]
fn same_seed_same_tree() {
    let cfg = MctsConfig {
        budget: 30,
        ..MctsConfig::default()
    };
    let a = search_from_root(&Chain, root(), &cfg, &mut RngStream::new(5)).unwrap();
    let b = search_from_root(&Chain, root(), &cfg, &mut RngStream::new(5)).unwrap();
    assert_eq!(a.visits, b.visits);
    assert_eq!(a.tree.paths(), b.tree.paths());
}

#[test]
fn invalid_config_is_rejected() {
    let cfg = MctsConfig {
        budget: 0,
        ..MctsConfig::default()
    };
    assert!(cfg.validate().is_err());
}
