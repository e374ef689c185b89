//! pUCT Monte-Carlo tree search over a learned model.
//!
//! The root is expanded before the first simulation and that expansion is not
//! counted against the budget; every simulation then walks down by pUCT
//! selection, expands exactly one new edge, and backs the discounted return up
//! the path. Unvisited edges have `Q = 0`.
//!
//! Ties in the selection score are broken uniformly at random from an
//! [`RngStream`]. A stream carries a group element `frame`: candidate sets are
//! pulled back through `frame⁻¹` before the draw and the result is pushed
//! forward through `frame`. Searching on `g·o` with [`rng_transport`]`(g, rng)`
//! therefore resolves every tie to the rotated counterpart of the choice made
//! when searching on `o` with `rng`.

use std::fmt;

use eqmz_nd::kernels::sorted_sum;
use eqmz_nd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution};
use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::group::{act_on_action, ActionId, GroupElement, LatentState};
use crate::worldmodel::{ModelError, WorldModel};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("simulation budget must be at least 1")]
    Budget,
    #[error("discount {0} outside [0, 1]")]
    Discount(f64),
    #[error("exploration constants must be positive (c1={c1}, c2={c2})")]
    Exploration { c1: f64, c2: f64 },
    #[error("temperature {0} must be finite and nonnegative")]
    Temperature(f64),
    #[error("root noise needs fraction in [0, 1] and positive concentration")]
    Noise,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RootNoise {
    pub enabled: bool,
    pub fraction: f64,
    pub concentration: f64,
}

impl Default for RootNoise {
    fn default() -> Self {
        Self {
            enabled: false,
            fraction: 0.25,
            concentration: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MctsConfig {
    pub budget: usize,
    pub c1: f64,
    pub c2: f64,
    pub discount: f64,
    pub noise: RootNoise,
    pub temperature: f64,
    pub normalize_q: bool,
}

impl Default for MctsConfig {
    fn default() -> Self {
        Self {
            budget: 50,
            c1: 1.25,
            c2: 19652.0,
            discount: 0.97,
            noise: RootNoise::default(),
            temperature: 0.0,
            normalize_q: false,
        }
    }
}

impl MctsConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.budget == 0 {
            return Err(ConfigError::Budget);
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(ConfigError::Discount(self.discount));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(ConfigError::Exploration { c1: self.c1, c2: self.c2 });
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(ConfigError::Temperature(self.temperature));
        }
        let n = &self.noise;
        if n.enabled && !((0.0..=1.0).contains(&n.fraction) && n.concentration > 0.0) {
            return Err(ConfigError::Noise);
        }
        Ok(())
    }
}

/// Seeded random stream whose action-valued draws live in a rotated frame.
#[derive(Clone, Debug)]
pub struct RngStream {
    rng: ChaCha8Rng,
    frame: GroupElement,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            frame: GroupElement::IDENTITY,
        }
    }

    pub fn frame(&self) -> GroupElement {
        self.frame
    }

    /// Uniform choice among `candidates`. The draw is an index into the
    /// sorted pulled-back set, so it does not depend on the frame.
    pub fn choose_action(&mut self, candidates: &[ActionId]) -> ActionId {
        assert!(!candidates.is_empty(), "choice from an empty set");
        let back = self.frame.inverse();
        let mut base: Vec<ActionId> = candidates.iter().map(|&a| act_on_action(back, a)).collect();
        base.sort_unstable();
        let i = self.rng.gen_range(0..base.len());
        act_on_action(self.frame, base[i])
    }

    /// Draw from unnormalized nonnegative `weights` indexed by action id.
    pub fn sample_categorical(&mut self, weights: &[f64]) -> ActionId {
        let base: Vec<f64> = (0..weights.len())
            .map(|b| weights[act_on_action(self.frame, ActionId(b as u8)).index()])
            .collect();
        let total = sorted_sum(&base);
        assert!(total > 0.0 && total.is_finite(), "categorical weights must have positive finite mass");
        let u = self.rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = base.iter().rposition(|&w| w > 0.0).expect("positive mass");
        for (b, &w) in base.iter().enumerate() {
            acc += w;
            if u < acc && w > 0.0 {
                pick = b;
                break;
            }
        }
        act_on_action(self.frame, ActionId(pick as u8))
    }

    /// Raw access for draws that are not action-valued.
    pub fn raw(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Wraps `rng` so its action draws are additionally mapped through `g`.
pub fn rng_transport(g: GroupElement, rng: RngStream) -> RngStream {
    RngStream {
        frame: g.compose(rng.frame),
        rng: rng.rng,
    }
}

/// Per-action edge statistics of one node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeStats {
    pub n: Vec<u32>,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    /// Model reward of each expanded edge, 0 until expanded.
    pub r: Vec<f64>,
}

impl NodeStats {
    pub fn fresh(prior: Vec<f64>) -> Self {
        let k = prior.len();
        Self {
            n: vec![0; k],
            q: vec![0.0; k],
            p: prior,
            r: vec![0.0; k],
        }
    }

    pub fn total_visits(&self) -> u64 {
        self.n.iter().map(|&n| n as u64).sum()
    }
}

/// pUCT score of every action:
/// `Q + P·√ΣN/(1+N)·(c1 + ln((ΣN + c2 + 1)/c2))`.
pub fn puct_scores(stats: &NodeStats, config: &MctsConfig, q_bounds: Option<(f64, f64)>) -> Vec<f64> {
    let total = stats.total_visits() as f64;
    let root = total.sqrt();
    let factor = config.c1 + ((total + config.c2 + 1.0) / config.c2).ln();
    (0..stats.p.len())
        .map(|a| {
            let q = match q_bounds {
                Some((lo, hi)) if stats.n[a] > 0 && hi > lo => (stats.q[a] - lo) / (hi - lo),
                _ => stats.q[a],
            };
            // evaluated left to right as written above
            q + stats.p[a] * root / (1.0 + stats.n[a] as f64) * factor
        })
        .collect()
}

/// Maximizing action, ties resolved by `rng`.
pub fn select_action_puct(stats: &NodeStats, config: &MctsConfig, q_bounds: Option<(f64, f64)>, rng: &mut RngStream) -> ActionId {
    let scores = puct_scores(stats, config, q_bounds);
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<ActionId> = (0..scores.len())
        .filter(|&a| scores[a] == best)
        .map(|a| ActionId(a as u8))
        .collect();
    rng.choose_action(&ties)
}

/// `Σ_{j<m} γ^j r_j + γ^m v_leaf`.
pub fn compute_return(rewards: &[f64], v_leaf: f64, discount: f64) -> f64 {
    let mut g = v_leaf;
    for r in rewards.iter().rev() {
        g = r + discount * g;
    }
    g
}

/// Node expansion as seen by the search.
#[derive(Clone, Debug, PartialEq)]
pub struct Expanded<L> {
    pub latent: L,
    pub reward: f64,
    pub prior: Vec<f64>,
    pub value: f64,
}

/// What the search needs from a model.
pub trait SearchModel {
    type Latent: Clone;
    fn num_actions(&self) -> usize;
    fn expand(&self, parent: &Self::Latent, a: ActionId) -> Result<Expanded<Self::Latent>, ModelError>;
}

impl SearchModel for WorldModel {
    type Latent = LatentState<Tensor>;

    fn num_actions(&self) -> usize {
        WorldModel::num_actions(self)
    }

    fn expand(&self, parent: &Self::Latent, a: ActionId) -> Result<Expanded<Self::Latent>, ModelError> {
        let e = self.recurrent_inference(parent, a)?;
        Ok(Expanded {
            latent: e.latent,
            reward: e.reward,
            prior: e.prior,
            value: e.value,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Node<L> {
    pub latent: L,
    pub value: f64,
    pub stats: NodeStats,
    pub children: Vec<Option<usize>>,
}

/// Search tree; node 0 is the root.
#[derive(Clone, Debug)]
pub struct Tree<L> {
    pub nodes: Vec<Node<L>>,
}

impl<L> Tree<L> {
    pub fn root(&self) -> &Node<L> {
        &self.nodes[0]
    }

    /// Node reached from the root by `path`, if expanded.
    pub fn lookup(&self, path: &[ActionId]) -> Option<&Node<L>> {
        let mut i = 0;
        for a in path {
            i = (*self.nodes[i].children.get(a.index())?)?;
        }
        Some(&self.nodes[i])
    }

    /// Every expanded node with its action path, depth first in action order.
    pub fn paths(&self) -> Vec<(Vec<ActionId>, usize)> {
        let mut out = Vec::new();
        let mut stack = vec![(Vec::new(), 0usize)];
        while let Some((path, i)) = stack.pop() {
            for (a, c) in self.nodes[i].children.iter().enumerate().rev() {
                if let Some(c) = c {
                    let mut p = path.clone();
                    p.push(ActionId(a as u8));
                    stack.push((p, *c));
                }
            }
            out.push((path, i));
        }
        out
    }
}

/// One simulation: the selected path, the return credited at each depth and
/// the edge statistics after backup, root edge first.
#[derive(Clone, Debug, PartialEq)]
pub struct SimRecord {
    pub sim: usize,
    pub path: Vec<ActionId>,
    pub returns: Vec<f64>,
    pub updated: Vec<(u32, f64)>,
}

impl fmt::Display for SimRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sim={} path=", self.sim)?;
        for (i, a) in self.path.iter().enumerate() {
            write!(f, "{}{}", if i > 0 { "," } else { "" }, a)?;
        }
        f.write_str(" G=")?;
        for (i, g) in self.returns.iter().enumerate() {
            write!(f, "{}{:?}", if i > 0 { "," } else { "" }, g)?;
        }
        f.write_str(" NQ=")?;
        for (i, (n, q)) in self.updated.iter().enumerate() {
            write!(f, "{}{}:{:?}", if i > 0 { "," } else { "" }, n, q)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SearchResult<L> {
    pub visits: Vec<u32>,
    /// Root visit counts divided by the budget.
    pub policy: Vec<f64>,
    /// `Σ N·Q / Σ N` over root edges.
    pub root_value: f64,
    pub tree: Tree<L>,
    pub trace: Vec<SimRecord>,
}

fn tree_q_bounds<L>(tree: &Tree<L>) -> Option<(f64, f64)> {
    let mut bounds: Option<(f64, f64)> = None;
    for node in &tree.nodes {
        for (a, &n) in node.stats.n.iter().enumerate() {
            if n > 0 {
                let q = node.stats.q[a];
                bounds = Some(match bounds {
                    None => (q, q),
                    Some((lo, hi)) => (lo.min(q), hi.max(q)),
                });
            }
        }
    }
    bounds
}

fn mix_noise(prior: &mut [f64], noise: &RootNoise, rng: &mut RngStream) {
    if !noise.enabled || prior.len() < 2 {
        return;
    }
    let dir = Dirichlet::new_with_size(noise.concentration, prior.len()).expect("validated concentration");
    let eta = dir.sample(rng.raw());
    for (p, e) in prior.iter_mut().zip(eta) {
        *p = (1.0 - noise.fraction) * *p + noise.fraction * e;
    }
}

/// Runs `config.budget` simulations from an already expanded root.
pub fn search_from_root<M: SearchModel>(
    model: &M,
    root: Expanded<M::Latent>,
    config: &MctsConfig,
    rng: &mut RngStream,
) -> Result<SearchResult<M::Latent>, ModelError> {
    let na = model.num_actions();
    let mut prior = root.prior;
    mix_noise(&mut prior, &config.noise, rng);
    let mut tree = Tree {
        nodes: vec![Node {
            latent: root.latent,
            value: root.value,
            stats: NodeStats::fresh(prior),
            children: vec![None; na],
        }],
    };
    let mut trace = Vec::with_capacity(config.budget);
    for sim in 0..config.budget {
        let bounds = if config.normalize_q { tree_q_bounds(&tree) } else { None };
        let mut edges: Vec<(usize, ActionId)> = Vec::new();
        let mut node = 0;
        let leaf_value = loop {
            let a = select_action_puct(&tree.nodes[node].stats, config, bounds, rng);
            edges.push((node, a));
            match tree.nodes[node].children[a.index()] {
                Some(child) => node = child,
                None => {
                    let e = model.expand(&tree.nodes[node].latent, a)?;
                    let child = tree.nodes.len();
                    tree.nodes.push(Node {
                        latent: e.latent,
                        value: e.value,
                        stats: NodeStats::fresh(e.prior),
                        children: vec![None; na],
                    });
                    let parent = &mut tree.nodes[node];
                    parent.children[a.index()] = Some(child);
                    parent.stats.r[a.index()] = e.reward;
                    break e.value;
                }
            }
        };
        let rewards: Vec<f64> = edges.iter().map(|&(i, a)| tree.nodes[i].stats.r[a.index()]).collect();
        let mut returns = vec![0.0; edges.len()];
        let mut updated = vec![(0, 0.0); edges.len()];
        for (k, &(i, a)) in edges.iter().enumerate().rev() {
            let g = compute_return(&rewards[k..], leaf_value, config.discount);
            let s = &mut tree.nodes[i].stats;
            let n = s.n[a.index()] as f64;
            s.q[a.index()] = (n * s.q[a.index()] + g) / (n + 1.0);
            s.n[a.index()] += 1;
            returns[k] = g;
            updated[k] = (s.n[a.index()], s.q[a.index()]);
        }
        trace.push(SimRecord {
            sim,
            path: edges.iter().map(|&(_, a)| a).collect(),
            returns,
            updated,
        });
    }
    let root = &tree.nodes[0].stats;
    let visits = root.n.clone();
    let total = root.total_visits() as f64;
    let policy = visits.iter().map(|&n| n as f64 / total).collect();
    let weighted: Vec<f64> = (0..na).map(|a| root.n[a] as f64 * root.q[a]).collect();
    let root_value = sorted_sum(&weighted) / total;
    Ok(SearchResult {
        visits,
        policy,
        root_value,
        tree,
        trace,
    })
}

/// Full search from an observation.
pub fn run_search(
    model: &WorldModel,
    observation: &Observation,
    config: &MctsConfig,
    rng: &mut RngStream,
) -> Result<SearchResult<LatentState<Tensor>>, ModelError> {
    let root = model.initial_inference(observation)?;
    let root = Expanded {
        latent: root.latent,
        reward: 0.0,
        prior: root.prior,
        value: root.value,
    };
    search_from_root(model, root, config, rng)
}

/// Acting rule: argmax visits at temperature 0, else sample `∝ N^{1/T}`.
pub fn sample_action(visits: &[f64], temperature: f64, rng: &mut RngStream) -> ActionId {
    if temperature == 0.0 {
        let best = visits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ties: Vec<ActionId> = (0..visits.len())
            .filter(|&a| visits[a] == best)
            .map(|a| ActionId(a as u8))
            .collect();
        rng.choose_action(&ties)
    } else {
        let w: Vec<f64> = visits.iter().map(|&v| v.powf(1.0 / temperature)).collect();
        rng.sample_categorical(&w)
    }
}
