//! Hexagonal cell lattice around a serving data center.
//!
//! Cells use axial coordinates `(q, r)`; the implied third cube coordinate is
//! `s = -q - r`. The serving DC sits at the origin and the ring of a cell is
//! its hex distance from the origin.
//!
//! The mobility chain over individual cells is lumped into [`AggState`]s,
//! which are the orbits of the 12-element dihedral symmetry group of the
//! lattice. Within ring `i` the corner cells form one orbit and the edge cells
//! are grouped by their distance to the nearest corner.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::chain::{ChainError, MarkovChain, RingIndexed};

#[derive(Debug, Error, PartialEq)]
pub enum HexError {
    #[error("ring count k must be at least {min}, got {k}")]
    RingCount { k: u32, min: u32 },
    #[error("invalid walk parameters: {0}")]
    InvalidWalk(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Axial unit offsets, in ring-walk order.
const DIRECTIONS: [(i32, i32); 6] = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HexCell {
    pub q: i32,
    pub r: i32,
}

impl HexCell {
    pub const ORIGIN: HexCell = HexCell { q: 0, r: 0 };

    pub const fn new(q: i32, r: i32) -> Self {
        HexCell { q, r }
    }

    #[inline]
    pub fn s(&self) -> i32 {
        -self.q - self.r
    }

    /// Hex distance from the origin.
    pub fn ring(&self) -> u32 {
        (self.q.unsigned_abs() + self.r.unsigned_abs() + self.s().unsigned_abs()) / 2
    }

    pub fn distance(&self, other: &HexCell) -> u32 {
        (*self - *other).ring()
    }

    pub fn neighbors(&self) -> [HexCell; 6] {
        DIRECTIONS.map(|(dq, dr)| HexCell::new(self.q + dq, self.r + dr))
    }

    /// Rotation by 60 degrees about the origin.
    pub fn rotate(&self) -> HexCell {
        // (q, r, s) -> (-r, -s, -q)
        HexCell::new(-self.r, -self.s())
    }

    /// Mirror image swapping the `r` and `s` cube axes.
    pub fn reflect(&self) -> HexCell {
        HexCell::new(self.q, self.s())
    }

    /// The twelve images of this cell under the dihedral group of the lattice.
    pub fn symmetric_images(&self) -> [HexCell; 12] {
        let mut out = [HexCell::ORIGIN; 12];
        let mut c = *self;
        for i in 0..6 {
            out[i] = c;
            out[i + 6] = c.reflect();
            c = c.rotate();
        }
        out
    }
}

impl std::ops::Add for HexCell {
    type Output = HexCell;
    fn add(self, rhs: HexCell) -> HexCell {
        HexCell::new(self.q + rhs.q, self.r + rhs.r)
    }
}

impl std::ops::Sub for HexCell {
    type Output = HexCell;
    fn sub(self, rhs: HexCell) -> HexCell {
        HexCell::new(self.q - rhs.q, self.r - rhs.r)
    }
}

impl fmt::Display for HexCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.q, self.r)
    }
}

impl RingIndexed for HexCell {
    fn ring(&self) -> u32 {
        HexCell::ring(self)
    }
}

pub fn ring_of(cell: HexCell) -> u32 {
    cell.ring()
}

pub fn neighbors(cell: HexCell) -> [HexCell; 6] {
    cell.neighbors()
}

/// Cells of ring `i` in walk order, starting from the corner at `i * (-1, 1)`.
pub fn ring_cells(i: u32) -> Vec<HexCell> {
    if i == 0 {
        return vec![HexCell::ORIGIN];
    }
    let i = i as i32;
    let (dq, dr) = DIRECTIONS[4];
    let mut cell = HexCell::new(dq * i, dr * i);
    let mut out = Vec::with_capacity(6 * i as usize);
    for (sq, sr) in DIRECTIONS {
        for _ in 0..i {
            out.push(cell);
            cell = HexCell::new(cell.q + sq, cell.r + sr);
        }
    }
    out
}

/// All cells in rings `0..k`, ordered ring by ring.
pub fn cells_within(k: u32) -> Vec<HexCell> {
    (0..k).flat_map(ring_cells).collect()
}

/// A lumped state of the mobility chain: one symmetry orbit of a ring.
///
/// `class_id` 0 is the corner orbit; `m >= 1` is the edge orbit whose cells
/// are `m` steps from the nearest corner.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AggState {
    pub ring: u32,
    pub class_id: u32,
}

impl AggState {
    pub const ORIGIN: AggState = AggState {
        ring: 0,
        class_id: 0,
    };

    pub fn of(cell: HexCell) -> AggState {
        let ring = cell.ring();
        // In cube coordinates the corner cells have a zero component; an edge
        // cell's smallest |component| is its step count to the nearest corner.
        let class_id = cell
            .q
            .unsigned_abs()
            .min(cell.r.unsigned_abs())
            .min(cell.s().unsigned_abs());
        AggState { ring, class_id }
    }

    pub fn is_corner(&self) -> bool {
        self.class_id == 0
    }

    /// Number of lumped states in ring `i`: `1 + ceil((i - 1) / 2)` for `i >= 2`.
    pub fn classes_in_ring(i: u32) -> u32 {
        if i <= 1 {
            1
        } else {
            1 + i / 2
        }
    }

    /// Number of member cells of this orbit.
    pub fn size(&self) -> u32 {
        if self.ring == 0 {
            1
        } else if self.class_id == 0 || 2 * self.class_id == self.ring {
            6
        } else {
            12
        }
    }

    /// Probability mass (in sixths) a member cell sends to the next ring out.
    pub fn outward_sixths(&self) -> u32 {
        match (self.ring, self.class_id) {
            (0, _) => 6,
            (_, 0) => 3,
            _ => 2,
        }
    }

    /// A member cell of this orbit, or `None` if the orbit does not exist.
    pub fn representative(&self) -> Option<HexCell> {
        if self.ring == 0 {
            return (self.class_id == 0).then_some(HexCell::ORIGIN);
        }
        if self.class_id > self.ring / 2 {
            return None;
        }
        // Walk `class_id` steps from the corner (ring, 0, -ring) towards (ring, -ring, 0).
        let i = self.ring as i32;
        Some(HexCell::new(i, -(self.class_id as i32)))
    }
}

impl fmt::Display for AggState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.class_id == 0 {
            write!(f, "C{}", self.ring)
        } else {
            write!(f, "C{}^{}", self.ring, self.class_id)
        }
    }
}

impl RingIndexed for AggState {
    fn ring(&self) -> u32 {
        self.ring
    }
}

/// Lumped states for rings `0..k` in ascending order.
pub fn agg_states(k: u32) -> Vec<AggState> {
    (0..k)
        .flat_map(|ring| {
            (0..AggState::classes_in_ring(ring)).map(move |class_id| AggState { ring, class_id })
        })
        .collect()
}

/// Maps every cell in rings `0..k` to its symmetry orbit.
pub fn orbit_partition(k: u32) -> Result<BTreeMap<HexCell, AggState>, HexError> {
    if k < 1 {
        return Err(HexError::RingCount { k, min: 1 });
    }
    Ok(cells_within(k)
        .into_iter()
        .map(|c| (c, AggState::of(c)))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WalkParams {
    /// Probability of stepping to each particular neighbor.
    pub p_step: f64,
    /// Cell residence rate; mean residence time is `1 / mu`.
    pub mu: f64,
}

impl Default for WalkParams {
    fn default() -> Self {
        WalkParams {
            p_step: 1.0 / 6.0,
            mu: 1.0,
        }
    }
}

impl WalkParams {
    pub fn new(p_step: f64, mu: f64) -> Result<Self, HexError> {
        let params = WalkParams { p_step, mu };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), HexError> {
        if !(self.p_step > 0.0 && 6.0 * self.p_step <= 1.0 + 1e-12) {
            return Err(HexError::InvalidWalk(format!(
                "p_step must lie in (0, 1/6], got {}",
                self.p_step
            )));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(HexError::InvalidWalk(format!(
                "mu must be positive, got {}",
                self.mu
            )));
        }
        Ok(())
    }
}

/// Destination of one neighbor step for a walk confined to rings `0..k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Jump {
    Cell(HexCell),
    /// The step left ring `k - 1`: the service migrates and the user is at
    /// distance 0 from the new serving DC.
    Reset,
}

impl Jump {
    /// Cell the chain lands in once a reset is applied.
    pub fn landing(&self) -> HexCell {
        match self {
            Jump::Cell(c) => *c,
            Jump::Reset => HexCell::ORIGIN,
        }
    }
}

pub fn walk_jumps(cell: HexCell, k: u32) -> [Jump; 6] {
    cell.neighbors().map(|n| {
        if n.ring() >= k {
            Jump::Reset
        } else {
            Jump::Cell(n)
        }
    })
}

/// Jump counts (in sixths) from `cell` to each lumped state, resets folded into the origin.
pub fn class_jump_counts(cell: HexCell, k: u32) -> BTreeMap<AggState, u32> {
    let mut counts = BTreeMap::new();
    for jump in walk_jumps(cell, k) {
        *counts.entry(AggState::of(jump.landing())).or_insert(0) += 1;
    }
    counts
}

/// Embedded jump chain of the random walk over every cell in rings `0..k`.
pub fn build_full_walk(k: u32, params: WalkParams) -> Result<MarkovChain<HexCell>, HexError> {
    if k < 2 {
        return Err(HexError::RingCount { k, min: 2 });
    }
    params.validate()?;
    let cells = cells_within(k);
    let index: BTreeMap<HexCell, usize> = cells.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let n = cells.len();
    let mut matrix = vec![vec![0.0; n]; n];
    let stay = 1.0 - 6.0 * params.p_step;
    for (i, cell) in cells.iter().enumerate() {
        for jump in walk_jumps(*cell, k) {
            matrix[i][index[&jump.landing()]] += params.p_step;
        }
        if stay > 0.0 {
            matrix[i][i] += stay;
        }
    }
    Ok(MarkovChain::from_rows(cells, matrix, params.mu)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn lattice(radius: i32) -> Vec<HexCell> {
        let mut out = Vec::new();
        for q in -radius..=radius {
            for r in -radius..=radius {
                out.push(HexCell::new(q, r));
            }
        }
        out
    }

    #[test]
    fn origin_and_first_ring() {
        assert_eq!(ring_of(HexCell::ORIGIN), 0);
        for n in neighbors(HexCell::ORIGIN) {
            assert_eq!(ring_of(n), 1);
        }
    }

    #[test]
    fn ring_three_has_eighteen_cells_by_enumeration() {
        let count = lattice(6).into_iter().filter(|c| ring_of(*c) == 3).count();
        assert_eq!(count, 18);
    }

    #[test]
    fn ring_cardinality_matches_enumeration() {
        let all = lattice(10);
        for i in 1..=8u32 {
            let brute: BTreeSet<_> = all.iter().copied().filter(|c| c.ring() == i).collect();
            let walked: BTreeSet<_> = ring_cells(i).into_iter().collect();
            assert_eq!(brute.len(), 6 * i as usize);
            assert_eq!(brute, walked);
        }
    }

    #[test]
    fn neighbors_are_distinct_adjacent_and_symmetric() {
        for a in lattice(5) {
            let ns = a.neighbors();
            let set: BTreeSet<_> = ns.iter().collect();
            assert_eq!(set.len(), 6);
            for b in ns {
                assert_eq!(a.distance(&b), 1);
                assert!(b.neighbors().contains(&a));
            }
        }
    }

    fn ring_profile(cell: HexCell) -> (usize, usize, usize) {
        let i = cell.ring();
        let ns = cell.neighbors();
        let inner = ns.iter().filter(|n| n.ring() + 1 == i).count();
        let same = ns.iter().filter(|n| n.ring() == i).count();
        let outer = ns.iter().filter(|n| n.ring() == i + 1).count();
        (inner, same, outer)
    }

    #[test]
    fn ring_one_cell_neighbor_profile() {
        for c in ring_cells(1) {
            assert_eq!(ring_profile(c), (1, 2, 3));
        }
    }

    #[test]
    fn ring_two_corner_neighbor_profile() {
        for c in ring_cells(2)
            .into_iter()
            .filter(|c| AggState::of(*c).is_corner())
        {
            assert_eq!(ring_profile(c), (1, 2, 3));
        }
        for c in ring_cells(2)
            .into_iter()
            .filter(|c| !AggState::of(*c).is_corner())
        {
            assert_eq!(ring_profile(c), (2, 2, 2));
        }
    }

    #[test]
    fn outward_probability_by_orbit_class() {
        for k in 2..=8 {
            for c in cells_within(k).into_iter().filter(|c| c.ring() >= 1) {
                let outward = c.neighbors().iter().filter(|n| n.ring() > c.ring()).count() as u32;
                let class = AggState::of(c);
                assert_eq!(outward, class.outward_sixths(), "cell {c}");
                assert_eq!(outward, if class.is_corner() { 3 } else { 2 });
            }
        }
    }

    #[test]
    fn orbit_partition_small_cases() {
        let p2 = orbit_partition(2).unwrap();
        let classes: BTreeSet<_> = p2.values().copied().collect();
        assert_eq!(classes.len(), 2);

        let p3 = orbit_partition(3).unwrap();
        let classes: BTreeSet<_> = p3.values().copied().collect();
        assert_eq!(
            classes.into_iter().collect::<Vec<_>>(),
            vec![
                AggState {
                    ring: 0,
                    class_id: 0
                },
                AggState {
                    ring: 1,
                    class_id: 0
                },
                AggState {
                    ring: 2,
                    class_id: 0
                },
                AggState {
                    ring: 2,
                    class_id: 1
                },
            ]
        );
        let members = |s: AggState| p3.values().filter(|v| **v == s).count();
        assert_eq!(
            members(AggState {
                ring: 2,
                class_id: 0
            }),
            6
        );
        assert_eq!(
            members(AggState {
                ring: 2,
                class_id: 1
            }),
            6
        );

        assert_eq!(
            orbit_partition(0),
            Err(HexError::RingCount { k: 0, min: 1 })
        );
    }

    #[test]
    fn five_ring_partition_state_count() {
        // 1 + 1 + 2 + 2 + 3 lumped states for rings 0..=4.
        let classes: BTreeSet<_> = orbit_partition(5).unwrap().values().copied().collect();
        assert_eq!(classes.len(), 9);
        assert_eq!(agg_states(5).len(), 9);
    }

    #[test]
    fn classes_are_exactly_dihedral_orbits() {
        // Orbits computed by brute force over the symmetry group.
        for k in 1..=9 {
            let cells = cells_within(k);
            let mut seen = BTreeSet::new();
            let mut orbits = 0;
            for c in &cells {
                if seen.contains(c) {
                    continue;
                }
                orbits += 1;
                let orbit: BTreeSet<_> = c.symmetric_images().into_iter().collect();
                let class = AggState::of(*c);
                for m in &orbit {
                    assert_eq!(AggState::of(*m), class);
                }
                assert_eq!(orbit.len() as u32, class.size());
                seen.extend(orbit);
            }
            assert_eq!(orbits, agg_states(k).len());
            for i in 2..k {
                let per_ring = cells
                    .iter()
                    .filter(|c| c.ring() == i)
                    .map(|c| AggState::of(*c))
                    .collect::<BTreeSet<_>>()
                    .len() as u32;
                assert_eq!(per_ring, 1 + (i - 1).div_ceil(2));
            }
        }
    }

    #[test]
    fn representatives_belong_to_their_orbit() {
        for s in agg_states(9) {
            let cell = s.representative().unwrap();
            assert_eq!(AggState::of(cell), s);
        }
        assert_eq!(
            AggState {
                ring: 3,
                class_id: 2
            }
            .representative(),
            None
        );
    }

    #[test]
    fn strong_lumpability_exact() {
        for k in 2..=8 {
            let mut by_class: BTreeMap<AggState, BTreeMap<AggState, u32>> = BTreeMap::new();
            for c in cells_within(k) {
                let counts = class_jump_counts(c, k);
                assert_eq!(counts.values().sum::<u32>(), 6);
                match by_class.get(&AggState::of(c)) {
                    Some(existing) => assert_eq!(existing, &counts, "k={k} cell={c}"),
                    None => {
                        by_class.insert(AggState::of(c), counts);
                    }
                }
            }
        }
    }

    #[test]
    fn full_walk_two_rings() {
        let chain = build_full_walk(2, WalkParams::default()).unwrap();
        assert_eq!(chain.len(), 7);
        let origin = chain.index_of(&HexCell::ORIGIN).unwrap();
        for c in ring_cells(1) {
            let j = chain.index_of(&c).unwrap();
            assert!((chain.prob(origin, j) - 1.0 / 6.0).abs() < 1e-15);
            assert!((chain.prob(j, origin) - 4.0 / 6.0).abs() < 1e-15);
            let within: f64 = ring_cells(1)
                .iter()
                .map(|d| chain.prob(j, chain.index_of(d).unwrap()))
                .sum();
            assert!((within - 2.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn full_walk_sizes_and_rows() {
        let chain = build_full_walk(5, WalkParams::default()).unwrap();
        assert_eq!(chain.len(), 61);
        for i in 0..chain.len() {
            let row: f64 = (0..chain.len()).map(|j| chain.prob(i, j)).sum();
            assert!((row - 1.0).abs() < 1e-12);
        }
        assert!(matches!(
            build_full_walk(1, WalkParams::default()),
            Err(HexError::RingCount { k: 1, min: 2 })
        ));
    }

    #[test]
    fn walk_params_validation() {
        assert!(WalkParams::new(1.0 / 6.0, 2.0).is_ok());
        assert!(WalkParams::new(0.1, 1.0).is_ok());
        assert!(WalkParams::new(0.0, 1.0).is_err());
        assert!(WalkParams::new(0.5, 1.0).is_err());
        assert!(WalkParams::new(1.0 / 6.0, 0.0).is_err());
    }
}
