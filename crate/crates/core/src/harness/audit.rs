//! Equivariance audit of the full search: for an observation `o` and a
//! rotation `g`, the search on `g·o` with the transported stream must visit
//! exactly the rotated edges of the search on `o`, and pick the rotated
//! action.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{generate_maze, observe, EnvConfig, MiniPacman, Observation};
use crate::group::{act_on_action, act_on_observation, ActionId, GroupElement};
use crate::mcts::{rng_transport, run_search, sample_action, MctsConfig, RngStream, SearchResult, Tree};
use crate::worldmodel::{ModelError, WorldModel};

use super::config::AuditConfig;
use super::HarnessError;

/// Where two paired searches first disagree.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Divergence {
    pub sim: usize,
    pub depth: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub case: usize,
    pub g: GroupElement,
    pub divergence: Option<Divergence>,
    pub actions: (ActionId, ActionId),
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.divergence.is_none() && act_on_action(self.g, self.actions.0) == self.actions.1
    }
}

impl fmt::Display for CaseResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "case={} g={} action={}->{} ", self.case, self.g, self.actions.0, self.actions.1)?;
        match (self.passed(), self.divergence) {
            (true, _) => f.write_str("pass"),
            (false, Some(d)) => write!(f, "FAIL sim={} depth={}", d.sim, d.depth),
            (false, None) => f.write_str("FAIL action"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditReport {
    pub variant: String,
    pub cases: Vec<CaseResult>,
}

impl AuditReport {
    pub fn passed(&self) -> usize {
        self.cases.iter().filter(|c| c.passed()).count()
    }

    pub fn failed(&self) -> usize {
        self.cases.len() - self.passed()
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "variant={}", self.variant)?;
        for c in &self.cases {
            writeln!(f, "{c}")?;
        }
        writeln!(f, "passed {}/{}", self.passed(), self.cases.len())
    }
}

fn node_counts<L>(tree: &Tree<L>, path: &[ActionId]) -> Option<Vec<u32>> {
    tree.lookup(path).map(|n| n.stats.n.clone())
}

/// First simulation, and depth within it, at which `b` stops being the
/// `g`-image of `a`. Compares selected paths and the visit counts written
/// by each backup, then every node of the final trees.
pub fn first_divergence<L>(g: GroupElement, a: &SearchResult<L>, b: &SearchResult<L>) -> Option<Divergence> {
    for (ra, rb) in a.trace.iter().zip(&b.trace) {
        let mapped: Vec<ActionId> = ra.path.iter().map(|&x| act_on_action(g, x)).collect();
        let depth = mapped
            .iter()
            .zip(&rb.path)
            .position(|(x, y)| x != y)
            .or_else(|| (mapped.len() != rb.path.len()).then(|| mapped.len().min(rb.path.len())))
            .or_else(|| ra.updated.iter().zip(&rb.updated).position(|(x, y)| x.0 != y.0));
        if let Some(depth) = depth {
            return Some(Divergence { sim: ra.sim, depth });
        }
    }
    if a.trace.len() != b.trace.len() {
        return Some(Divergence {
            sim: a.trace.len().min(b.trace.len()),
            depth: 0,
        });
    }
    for (path, _) in a.tree.paths() {
        let mapped: Vec<ActionId> = path.iter().map(|&x| act_on_action(g, x)).collect();
        let na = node_counts(&a.tree, &path).expect("path from tree");
        let ok = node_counts(&b.tree, &mapped).is_some_and(|nb| {
            na.len() == nb.len() && (0..na.len()).all(|x| nb[act_on_action(g, ActionId(x as u8)).index()] == na[x])
        });
        if !ok {
            return Some(Divergence {
                sim: a.trace.len(),
                depth: path.len(),
            });
        }
    }
    None
}

/// Runs the paired searches for one observation and one rotation.
pub fn audit_case(
    model: &WorldModel,
    obs: &Observation,
    g: GroupElement,
    config: &MctsConfig,
    seed: u64,
    case: usize,
) -> Result<CaseResult, ModelError> {
    let mut plain = RngStream::new(seed);
    let mut moved = rng_transport(g, RngStream::new(seed));
    let a = run_search(model, obs, config, &mut plain)?;
    let b = run_search(model, &act_on_observation(g, obs), config, &mut moved)?;
    let actions = (sample_action(&a.policy, 0.0, &mut plain), sample_action(&b.policy, 0.0, &mut moved));
    Ok(CaseResult {
        case,
        g,
        divergence: first_divergence(g, &a, &b),
        actions,
    })
}

/// Audited observations: random maps, random starts, short random walks.
pub fn audit_observations(env: &EnvConfig, audit: &AuditConfig) -> Result<Vec<(u64, Observation)>, HarnessError> {
    let pacman = MiniPacman::new(env.clone()).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(audit.seed);
    let mut out = Vec::with_capacity(audit.cases);
    for _ in 0..audit.cases {
        let maze = generate_maze(rng.gen(), env.side)?;
        let mut state = pacman.reset(&maze, rng.gen())?;
        let walk = rng.gen_range(0..=audit.max_walk);
        for _ in 0..walk {
            let next = pacman.step(&state, ActionId::MOVES[rng.gen_range(0..4)]);
            if next.done {
                break;
            }
            state = next.state;
        }
        out.push((rng.gen(), observe(&state)));
    }
    Ok(out)
}

pub fn run_audit(model: &WorldModel, env: &EnvConfig, mcts: &MctsConfig, audit: &AuditConfig) -> Result<AuditReport, HarnessError> {
    let mut cfg = mcts.clone();
    cfg.budget = audit.budget;
    cfg.noise.enabled = false;
    let mut cases = Vec::with_capacity(4 * audit.cases);
    for (i, (seed, obs)) in audit_observations(env, audit)?.into_iter().enumerate() {
        for g in GroupElement::ALL {
            cases.push(audit_case(model, &obs, g, &cfg, seed, i)?);
        }
    }
    Ok(AuditReport {
        variant: model.variant().to_string(),
        cases,
    })
}
