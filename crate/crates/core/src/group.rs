//! The cyclic rotation group C4 and its three representations: on grid
//! observations (spatial rotation), on actions (direction permutation) and
//! on latent states (cyclic shift of the four components).

use std::fmt;

/// A clockwise rotation by `90·k` degrees, `k ∈ {0, 1, 2, 3}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct GroupElement(u8);

impl GroupElement {
    pub const IDENTITY: Self = Self(0);
    pub const R90: Self = Self(1);
    pub const R180: Self = Self(2);
    pub const R270: Self = Self(3);

    /// All four elements in order of increasing angle.
    pub const ALL: [Self; 4] = [Self::IDENTITY, Self::R90, Self::R180, Self::R270];

    pub fn new(k: i64) -> Self {
        Self(k.rem_euclid(4) as u8)
    }

    pub fn k(self) -> u8 {
        self.0
    }

    pub fn compose(self, other: Self) -> Self {
        Self((self.0 + other.0) % 4)
    }

    pub fn inverse(self) -> Self {
        Self((4 - self.0) % 4)
    }

    pub fn is_identity(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}", 90 * self.0 as u32)
    }
}

pub fn compose(g: GroupElement, h: GroupElement) -> GroupElement {
    g.compose(h)
}

pub fn inverse(g: GroupElement) -> GroupElement {
    g.inverse()
}

/// Action identifier. Ids `0..4` are the moves right, down, left, up; larger
/// ids are non-movement actions and are fixed by every rotation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActionId(pub u8);

impl ActionId {
    pub const RIGHT: Self = Self(0);
    pub const DOWN: Self = Self(1);
    pub const LEFT: Self = Self(2);
    pub const UP: Self = Self(3);
    pub const STAY: Self = Self(4);

    pub const MOVES: [Self; 4] = [Self::RIGHT, Self::DOWN, Self::LEFT, Self::UP];

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_move(self) -> bool {
        self.0 < 4
    }

    /// Row and column offset of a move; `(0, 0)` for non-movement actions.
    pub fn delta(self) -> (isize, isize) {
        match self.0 {
            0 => (0, 1),
            1 => (1, 0),
            2 => (0, -1),
            3 => (-1, 0),
            _ => (0, 0),
        }
    }

    pub fn symbol(self) -> char {
        match self.0 {
            0 => '→',
            1 => '↓',
            2 => '←',
            3 => '↑',
            _ => '·',
        }
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Permutes directions along the cycle → ↓ ← ↑ once per quarter turn.
pub fn act_on_action(g: GroupElement, a: ActionId) -> ActionId {
    if a.is_move() {
        ActionId((a.0 + g.0) % 4)
    } else {
        a
    }
}

/// Index map `i ↦ act_on_action(g, i)` for an action space of size `n`.
pub fn action_permutation(g: GroupElement, n: usize) -> Vec<usize> {
    (0..n)
        .map(|i| act_on_action(g, ActionId(i as u8)).index())
        .collect()
}

/// Rectangular row-major grid.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Grid2D<T> {
    height: usize,
    width: usize,
    cells: Vec<T>,
}

impl<T> Grid2D<T> {
    pub fn from_vec(height: usize, width: usize, cells: Vec<T>) -> Option<Self> {
        (cells.len() == height * width).then_some(Self {
            height,
            width,
            cells,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut cells = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                cells.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            cells,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> &[T] {
        &self.cells
    }

    pub fn get(&self, r: usize, c: usize) -> &T {
        &self.cells[r * self.width + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.cells[r * self.width + c] = v;
    }

    pub fn in_bounds(&self, r: isize, c: isize) -> bool {
        r >= 0 && c >= 0 && (r as usize) < self.height && (c as usize) < self.width
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Grid2D<U> {
        Grid2D {
            height: self.height,
            width: self.width,
            cells: self.cells.iter().map(f).collect(),
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for Grid2D<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Grid2D {}x{}", self.height, self.width)?;
        for r in 0..self.height {
            writeln!(f, "  {:?}", &self.cells[r * self.width..(r + 1) * self.width])?;
        }
        Ok(())
    }
}

/// Where cell `(r, c)` of an `height × width` grid lands after rotating the
/// grid by `g`.
pub fn rotate_index(g: GroupElement, height: usize, width: usize, r: usize, c: usize) -> (usize, usize) {
    let (mut h, mut r, mut c) = (height, r, c);
    let mut w = width;
    for _ in 0..g.0 {
        // (r, c) of an h×w grid maps to (c, h-1-r) of the w×h result
        let nr = c;
        let nc = h - 1 - r;
        r = nr;
        c = nc;
        std::mem::swap(&mut h, &mut w);
    }
    (r, c)
}

/// Rotates a grid clockwise by `90·g.k` degrees. An `H × W` grid becomes
/// `W × H` under odd quarter turns.
pub fn act_on_observation<T: Clone>(g: GroupElement, x: &Grid2D<T>) -> Grid2D<T> {
    if g.is_identity() {
        return x.clone();
    }
    let (h, w) = (x.height, x.width);
    let (oh, ow) = if g.0 % 2 == 1 { (w, h) } else { (h, w) };
    let mut slots: Vec<Option<T>> = vec![None; h * w];
    for r in 0..h {
        for c in 0..w {
            let (nr, nc) = rotate_index(g, h, w, r, c);
            slots[nr * ow + nc] = Some(x.get(r, c).clone());
        }
    }
    Grid2D {
        height: oh,
        width: ow,
        cells: slots.into_iter().map(|s| s.expect("rotation is a bijection")).collect(),
    }
}

/// Four equally shaped components on which rotations act by cyclic shift.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState<T> {
    pub components: [T; 4],
}

impl<T> LatentState<T> {
    pub fn new(components: [T; 4]) -> Self {
        Self { components }
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> LatentState<U> {
        LatentState {
            components: self.components.each_ref().map(f),
        }
    }
}

/// One quarter turn sends `(z1, z2, z3, z4)` to `(z2, z3, z4, z1)`.
pub fn act_on_latent<T: Clone>(g: GroupElement, z: &LatentState<T>) -> LatentState<T> {
    let k = g.0 as usize;
    LatentState {
        components: std::array::from_fn(|i| z.components[(i + k) % 4].clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(k: i64) -> GroupElement {
        GroupElement::new(k)
    }

    #[test]
    fn composition_examples() {
        assert_eq!(compose(e(1), e(1)), e(2));
        assert_eq!(compose(e(0), e(3)), e(3));
        assert_eq!(compose(e(3), e(1)), e(0));
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(inverse(e(1)), e(3));
        assert_eq!(inverse(e(0)), e(0));
        assert_eq!(inverse(e(2)), e(2));
    }

    #[test]
    fn k_is_reduced() {
        assert_eq!(e(7).k(), 3);
        assert_eq!(e(-1).k(), 3);
        assert_eq!(e(4), GroupElement::IDENTITY);
    }

    #[test]
    fn two_by_two_rotation() {
        let x = Grid2D::from_vec(2, 2, vec!['a', 'b', 'c', 'd']).unwrap();
        let y = act_on_observation(e(1), &x);
        assert_eq!(y.cells(), &['c', 'a', 'd', 'b']);
        assert_eq!(act_on_observation(e(0), &x), x);
    }

    #[test]
    fn non_square_rotation_transposes_shape() {
        let x = Grid2D::from_fn(2, 3, |r, c| r * 3 + c);
        let y = act_on_observation(e(1), &x);
        assert_eq!((y.height(), y.width()), (3, 2));
        // cell (r, c) ↦ (c, H-1-r)
        assert_eq!(*y.get(0, 1), 0);
        assert_eq!(*y.get(2, 0), 5);
    }

    #[test]
    fn action_examples() {
        assert_eq!(act_on_action(e(1), ActionId::DOWN), ActionId::LEFT);
        assert_eq!(act_on_action(e(2), ActionId::RIGHT), ActionId::LEFT);
        for a in 0..6 {
            assert_eq!(act_on_action(e(0), ActionId(a)), ActionId(a));
        }
        assert_eq!(act_on_action(e(3), ActionId::STAY), ActionId::STAY);
    }

    #[test]
    fn latent_examples() {
        let z = LatentState::new([1, 2, 3, 4]);
        assert_eq!(act_on_latent(e(1), &z).components, [2, 3, 4, 1]);
        assert_eq!(act_on_latent(e(0), &z).components, [1, 2, 3, 4]);
        assert_eq!(act_on_latent(e(2), &z).components, [3, 4, 1, 2]);
    }

    #[test]
    fn move_deltas_follow_rotation() {
        // moving then rotating equals rotating then moving the rotated action
        let (h, w) = (5, 7);
        for g in GroupElement::ALL {
            for a in ActionId::MOVES {
                let (r, c) = (2usize, 3usize);
                let (dr, dc) = a.delta();
                let moved = ((r as isize + dr) as usize, (c as isize + dc) as usize);
                let lhs = rotate_index(g, h, w, moved.0, moved.1);
                let (rr, rc) = rotate_index(g, h, w, r, c);
                let (ddr, ddc) = act_on_action(g, a).delta();
                let rhs = ((rr as isize + ddr) as usize, (rc as isize + ddc) as usize);
                assert_eq!(lhs, rhs, "g={g} a={a}");
            }
        }
    }
}
