//! MiniPacman-style grid-world whose dynamics commute exactly with C4.
//!
//! The agent collects food in a walled maze while ghosts chase it. Ghost
//! movement breaks distance ties in the ghost's own frame (straight, right,
//! left, back), so rotating a state and then stepping gives bit-for-bit the
//! rotation of the stepped state.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::group::{act_on_action, act_on_observation, rotate_index, ActionId, GroupElement, Grid2D};

pub const MIN_SIDE: usize = 5;
pub const OBS_CHANNELS: usize = 4;

/// Fraction of removable interior walls knocked out after carving, so the
/// maze has loops instead of being a tree.
const LOOP_FRACTION: f64 = 0.2;

/// One-hot channels per cell: walls, food, agent, ghosts.
pub type Observation = Grid2D<[f64; OBS_CHANNELS]>;

pub type Pos = (usize, usize);

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EnvError {
    #[error("maze side {0} is below the minimum of {MIN_SIDE}")]
    SideTooSmall(usize),
    #[error("episode cap must be at least 1")]
    EpisodeCap,
    #[error("maze has {cells} corridor cells but {needed} occupants need placing")]
    TooFewCorridors { cells: usize, needed: usize },
    #[error("split generation exhausted after {attempts} attempts: found {found} of {wanted} novel maps")]
    SplitExhausted {
        wanted: usize,
        found: usize,
        attempts: usize,
    },
    #[error("map line {line}: {msg}")]
    MapParse { line: usize, msg: String },
}

/// Square wall mask. Borders are walls and corridors are connected.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct MazeMap {
    walls: Grid2D<bool>,
}

impl MazeMap {
    /// Wraps a wall mask after checking squareness, walled borders and
    /// corridor connectivity.
    pub fn from_walls(walls: Grid2D<bool>) -> Result<Self, EnvError> {
        let bad = |msg: String| EnvError::MapParse { line: 0, msg };
        if walls.height() != walls.width() {
            return Err(bad(format!("map is {}x{}, not square", walls.height(), walls.width())));
        }
        let side = walls.height();
        if side < MIN_SIDE {
            return Err(EnvError::SideTooSmall(side));
        }
        for i in 0..side {
            for (r, c) in [(0, i), (side - 1, i), (i, 0), (i, side - 1)] {
                if !walls.get(r, c) {
                    return Err(bad(format!("border cell ({r}, {c}) is not a wall")));
                }
            }
        }
        let maze = Self { walls };
        let corridors = maze.corridor_cells();
        if corridors.is_empty() {
            return Err(bad("map has no corridor cells".into()));
        }
        if maze.reachable_from(corridors[0]).len() != corridors.len() {
            return Err(bad("corridors are not connected".into()));
        }
        Ok(maze)
    }

    pub fn side(&self) -> usize {
        self.walls.height()
    }

    pub fn walls(&self) -> &Grid2D<bool> {
        &self.walls
    }

    pub fn is_wall(&self, r: usize, c: usize) -> bool {
        *self.walls.get(r, c)
    }

    /// Corridor cells in row-major order.
    pub fn corridor_cells(&self) -> Vec<Pos> {
        let side = self.side();
        let mut out = Vec::new();
        for r in 0..side {
            for c in 0..side {
                if !self.is_wall(r, c) {
                    out.push((r, c));
                }
            }
        }
        out
    }

    fn reachable_from(&self, start: Pos) -> HashSet<Pos> {
        let mut seen = HashSet::from([start]);
        let mut stack = vec![start];
        while let Some(p) = stack.pop() {
            for a in ActionId::MOVES {
                if let Some(n) = self.neighbor(p, a) {
                    if seen.insert(n) {
                        stack.push(n);
                    }
                }
            }
        }
        seen
    }

    /// The open cell one step from `p` in direction `a`, if any.
    pub fn neighbor(&self, p: Pos, a: ActionId) -> Option<Pos> {
        let (dr, dc) = a.delta();
        let (r, c) = (p.0 as isize + dr, p.1 as isize + dc);
        if !self.walls.in_bounds(r, c) {
            return None;
        }
        let (r, c) = (r as usize, c as usize);
        (!self.is_wall(r, c)).then_some((r, c))
    }

    pub fn rotate(&self, g: GroupElement) -> Self {
        Self {
            walls: act_on_observation(g, &self.walls),
        }
    }

    /// Lexicographic minimum of the wall mask over all four rotations, as
    /// ASCII rows.
    pub fn canonical_form(&self) -> String {
        GroupElement::ALL
            .iter()
            .map(|&g| self.rotate(g).to_ascii())
            .min()
            .expect("four rotations")
    }

    pub fn to_ascii(&self) -> String {
        let side = self.side();
        let mut s = String::with_capacity(side * (side + 1));
        for r in 0..side {
            for c in 0..side {
                s.push(if self.is_wall(r, c) { '#' } else { '.' });
            }
            s.push('\n');
        }
        s
    }

    /// Parses the map file format: one row per line, `#` wall, `.` corridor.
    pub fn parse_ascii(text: &str) -> Result<Self, EnvError> {
        let rows: Vec<&str> = text.lines().collect();
        let side = rows.len();
        let mut cells = Vec::with_capacity(side * side);
        for (i, row) in rows.iter().enumerate() {
            let n = row.chars().count();
            if n != side {
                return Err(EnvError::MapParse {
                    line: i + 1,
                    msg: format!("row has {n} cells, expected {side}"),
                });
            }
            for ch in row.chars() {
                cells.push(match ch {
                    '#' => true,
                    '.' => false,
                    other => {
                        return Err(EnvError::MapParse {
                            line: i + 1,
                            msg: format!("unexpected character {other:?}"),
                        })
                    }
                });
            }
        }
        let walls = Grid2D::from_vec(side, side, cells).ok_or(EnvError::MapParse {
            line: 0,
            msg: "empty map".into(),
        })?;
        Self::from_walls(walls)
    }
}

impl fmt::Debug for MazeMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "MazeMap {}x{}", self.side(), self.side())?;
        f.write_str(&self.to_ascii())
    }
}

/// Carves a maze with a seeded recursive backtracker on the largest odd
/// lattice that fits, knocks out a fraction of walls to add loops, and pads
/// even sides with one extra wall row and column.
pub fn generate_maze(seed: u64, side: usize) -> Result<MazeMap, EnvError> {
    if side < MIN_SIDE {
        return Err(EnvError::SideTooSmall(side));
    }
    let n = if side % 2 == 1 { side } else { side - 1 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut walls = Grid2D::from_fn(side, side, |_, _| true);
    let cells = (n - 1) / 2;
    let mut visited = vec![false; cells * cells];
    let start = (rng.gen_range(0..cells), rng.gen_range(0..cells));
    visited[start.0 * cells + start.1] = true;
    walls.set(2 * start.0 + 1, 2 * start.1 + 1, false);
    let mut stack = vec![start];
    while let Some(&(cr, cc)) = stack.last() {
        let options: Vec<(usize, usize)> = ActionId::MOVES
            .iter()
            .filter_map(|a| {
                let (dr, dc) = a.delta();
                let (nr, nc) = (cr as isize + dr, cc as isize + dc);
                if nr < 0 || nc < 0 || nr as usize >= cells || nc as usize >= cells {
                    return None;
                }
                let (nr, nc) = (nr as usize, nc as usize);
                (!visited[nr * cells + nc]).then_some((nr, nc))
            })
            .collect();
        if options.is_empty() {
            stack.pop();
            continue;
        }
        let (nr, nc) = options[rng.gen_range(0..options.len())];
        visited[nr * cells + nc] = true;
        walls.set(cr + nr + 1, cc + nc + 1, false);
        walls.set(2 * nr + 1, 2 * nc + 1, false);
        stack.push((nr, nc));
    }
    // walls between two lattice cells, horizontally or vertically
    for r in 1..n - 1 {
        for c in 1..n - 1 {
            let between_h = r % 2 == 1 && c % 2 == 0;
            let between_v = r % 2 == 0 && c % 2 == 1;
            if (between_h || between_v) && *walls.get(r, c) && rng.gen_bool(LOOP_FRACTION) {
                walls.set(r, c, false);
            }
        }
    }
    MazeMap::from_walls(walls)
}

/// Reward and episode settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub side: usize,
    pub ghosts: usize,
    pub food_reward: f64,
    pub completion_bonus: f64,
    pub caught_penalty: f64,
    pub episode_cap: u32,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            side: 14,
            ghosts: 1,
            food_reward: 1.0,
            completion_bonus: 5.0,
            caught_penalty: -5.0,
            episode_cap: 200,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.side < MIN_SIDE {
            return Err(EnvError::SideTooSmall(self.side));
        }
        if self.episode_cap < 1 {
            return Err(EnvError::EpisodeCap);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Ghost {
    pub pos: Pos,
    pub heading: ActionId,
}

/// Full simulation state. Immutable in use: [`MiniPacman::step`] returns a
/// new value.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub maze: Arc<MazeMap>,
    pub agent: Pos,
    pub ghosts: Vec<Ghost>,
    pub food: Grid2D<bool>,
    pub food_left: usize,
    pub steps: u32,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
}

/// The environment: configuration plus pure `reset` and `step`.
#[derive(Clone, Debug)]
pub struct MiniPacman {
    config: EnvConfig,
}

impl MiniPacman {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// Places the agent and ghosts on seed-chosen distinct corridor cells
    /// and food on every other corridor cell.
    pub fn reset(&self, maze: &MazeMap, seed: u64) -> Result<EnvState, EnvError> {
        let mut free = maze.corridor_cells();
        let needed = 1 + self.config.ghosts;
        if free.len() < needed {
            return Err(EnvError::TooFewCorridors {
                cells: free.len(),
                needed,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = free.swap_remove(rng.gen_range(0..free.len()));
        let ghosts = (0..self.config.ghosts)
            .map(|_| Ghost {
                pos: free.swap_remove(rng.gen_range(0..free.len())),
                heading: ActionId::MOVES[rng.gen_range(0..4)],
            })
            .collect::<Vec<_>>();
        let mut food = Grid2D::from_fn(maze.side(), maze.side(), |r, c| !maze.is_wall(r, c));
        food.set(agent.0, agent.1, false);
        for g in &ghosts {
            food.set(g.pos.0, g.pos.1, false);
        }
        let food_left = food.cells().iter().filter(|&&f| f).count();
        Ok(EnvState {
            maze: Arc::new(maze.clone()),
            agent,
            ghosts,
            food,
            food_left,
            steps: 0,
            done: false,
        })
    }

    /// Reset whose random placement is drawn in the frame `frame⁻¹·maze` and
    /// carried back by `frame`. Satisfies
    /// `reset_in_frame(g·maze, seed, g) == rotate_state(g, reset(maze, seed))`.
    pub fn reset_in_frame(&self, maze: &MazeMap, seed: u64, frame: GroupElement) -> Result<EnvState, EnvError> {
        let base = maze.rotate(frame.inverse());
        Ok(rotate_state(frame, &self.reset(&base, seed)?))
    }

    pub fn step(&self, state: &EnvState, a: ActionId) -> StepOutcome {
        if state.done {
            return StepOutcome {
                state: state.clone(),
                reward: 0.0,
                done: true,
            };
        }
        let cfg = &self.config;
        let mut next = state.clone();
        let mut reward = 0.0;
        let old_agent = state.agent;
        if let Some(p) = state.maze.neighbor(old_agent, a) {
            next.agent = p;
        }
        let (ar, ac) = next.agent;
        if *next.food.get(ar, ac) {
            next.food.set(ar, ac, false);
            next.food_left -= 1;
            reward += cfg.food_reward;
        }
        if next.food_left == 0 {
            reward += cfg.completion_bonus;
            next.done = true;
        } else if next.ghosts.iter().any(|g| g.pos == next.agent) {
            reward += cfg.caught_penalty;
            next.done = true;
        } else {
            let mut caught = false;
            for ghost in next.ghosts.iter_mut() {
                let before = ghost.pos;
                *ghost = ghost_move(&state.maze, *ghost, next.agent);
                if ghost.pos == next.agent || (before == next.agent && ghost.pos == old_agent) {
                    caught = true;
                }
            }
            if caught {
                reward += cfg.caught_penalty;
                next.done = true;
            }
        }
        next.steps += 1;
        if next.steps >= cfg.episode_cap {
            next.done = true;
        }
        StepOutcome {
            done: next.done,
            state: next,
            reward,
        }
    }
}

fn manhattan(a: Pos, b: Pos) -> usize {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

/// Greedy chase: pick the open neighbor closest to the target; ties go to
/// straight ahead, then the ghost's right, its left, and finally back.
fn ghost_move(maze: &MazeMap, ghost: Ghost, target: Pos) -> Ghost {
    let h = ghost.heading.0;
    let preference = [h, (h + 1) % 4, (h + 3) % 4, (h + 2) % 4];
    let mut best: Option<(usize, Ghost)> = None;
    for d in preference {
        let dir = ActionId(d);
        if let Some(p) = maze.neighbor(ghost.pos, dir) {
            let dist = manhattan(p, target);
            if best.is_none_or(|(bd, _)| dist < bd) {
                best = Some((dist, Ghost { pos: p, heading: dir }));
            }
        }
    }
    best.map_or(ghost, |(_, g)| g)
}

/// Rotates every spatial part of a state and every heading.
pub fn rotate_state(g: GroupElement, state: &EnvState) -> EnvState {
    if g.is_identity() {
        return state.clone();
    }
    let side = state.maze.side();
    let rot = |p: Pos| rotate_index(g, side, side, p.0, p.1);
    EnvState {
        maze: Arc::new(state.maze.rotate(g)),
        agent: rot(state.agent),
        ghosts: state
            .ghosts
            .iter()
            .map(|gh| Ghost {
                pos: rot(gh.pos),
                heading: act_on_action(g, gh.heading),
            })
            .collect(),
        food: act_on_observation(g, &state.food),
        food_left: state.food_left,
        steps: state.steps,
        done: state.done,
    }
}

pub fn observe(state: &EnvState) -> Observation {
    let side = state.maze.side();
    let mut obs = Grid2D::from_fn(side, side, |r, c| {
        [
            if state.maze.is_wall(r, c) { 1.0 } else { 0.0 },
            if *state.food.get(r, c) { 1.0 } else { 0.0 },
            0.0,
            0.0,
        ]
    });
    let mut cell = *obs.get(state.agent.0, state.agent.1);
    cell[2] = 1.0;
    obs.set(state.agent.0, state.agent.1, cell);
    for gh in &state.ghosts {
        let mut cell = *obs.get(gh.pos.0, gh.pos.1);
        cell[3] = 1.0;
        obs.set(gh.pos.0, gh.pos.1, cell);
    }
    obs
}

/// A generated map together with the seed that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct SeededMap {
    pub seed: u64,
    pub map: MazeMap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RotatedMap {
    pub source: usize,
    pub rotation: GroupElement,
    pub map: MazeMap,
}

/// Training maps `X`, their distinct nontrivial rotations `RX`, and maps `Y`
/// whose canonical forms avoid every canonical form in `X`.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub side: usize,
    pub train: Vec<SeededMap>,
    pub rotated: Vec<RotatedMap>,
    pub eval: Vec<SeededMap>,
}

/// Candidate seeds tried per requested map before giving up.
const ATTEMPTS_PER_MAP: usize = 200;

pub fn make_splits(seed: u64, side: usize, n_train: usize, n_eval: usize) -> Result<Splits, EnvError> {
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut draw = |wanted: usize, seen: &mut HashSet<String>| -> Result<Vec<SeededMap>, EnvError> {
        let mut out = Vec::with_capacity(wanted);
        let budget = ATTEMPTS_PER_MAP * wanted.max(1);
        let mut attempts = 0;
        while out.len() < wanted {
            if attempts == budget {
                return Err(EnvError::SplitExhausted {
                    wanted,
                    found: out.len(),
                    attempts,
                });
            }
            attempts += 1;
            let s: u64 = seeds.gen();
            let map = generate_maze(s, side)?;
            if seen.insert(map.canonical_form()) {
                out.push(SeededMap { seed: s, map });
            }
        }
        Ok(out)
    };
    let train = draw(n_train, &mut seen)?;
    let eval = draw(n_eval, &mut seen)?;
    Ok(Splits {
        side,
        rotated: rotations_of(&train),
        train,
        eval,
    })
}

/// Nontrivial rotations of each map, dropping any that coincide with the map
/// itself or with an earlier rotation of it.
pub fn rotations_of(maps: &[SeededMap]) -> Vec<RotatedMap> {
    let mut out = Vec::new();
    for (i, m) in maps.iter().enumerate() {
        let mut kept: Vec<MazeMap> = vec![m.map.clone()];
        for g in [GroupElement::R90, GroupElement::R180, GroupElement::R270] {
            let r = m.map.rotate(g);
            if !kept.contains(&r) {
                kept.push(r.clone());
                out.push(RotatedMap {
                    source: i,
                    rotation: g,
                    map: r,
                });
            }
        }
    }
    out
}
