//! Discrete-time Markov chains over labelled states, exact lumping, and
//! steady-state metrics for the ring-structured mobility chain.

use std::collections::BTreeMap;
use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Row sums and lumped rows are compared at this tolerance.
pub const LUMP_TOL: f64 = 1e-12;
/// Maximum accepted balance residual `||pi P - pi||_inf` of a steady state.
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum ChainError {
    #[error("transition matrix is {rows}x{cols} for {states} states")]
    Shape {
        states: usize,
        rows: usize,
        cols: usize,
    },
    #[error("row {row} is not a probability vector (sum {sum})")]
    NotStochastic { row: usize, sum: f64 },
    #[error("duplicate state label at index {0}")]
    DuplicateState(usize),
    #[error("state {0} missing from the partition")]
    MissingState(String),
    #[error("partition is not lumpable: {member} disagrees with {representative} on target {target} by {gap:e}")]
    LumpabilityViolation {
        representative: String,
        member: String,
        target: String,
        gap: f64,
    },
    #[error("steady-state system is singular (chain not irreducible)")]
    SingularSystem,
    #[error("steady-state residual {0:e} exceeds tolerance")]
    Residual(f64),
}

#[derive(Clone, Debug)]
pub struct MarkovChain<S> {
    states: Vec<S>,
    index: BTreeMap<S, usize>,
    matrix: DMatrix<f64>,
    sojourn_rate: f64,
}

impl<S: Ord + Clone + Debug> MarkovChain<S> {
    pub fn new(
        states: Vec<S>,
        matrix: DMatrix<f64>,
        sojourn_rate: f64,
    ) -> Result<Self, ChainError> {
        let n = states.len();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(ChainError::Shape {
                states: n,
                rows: matrix.nrows(),
                cols: matrix.ncols(),
            });
        }
        for i in 0..n {
            let row = matrix.row(i);
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > LUMP_TOL {
                return Err(ChainError::NotStochastic { row: i, sum });
            }
        }
        let mut index = BTreeMap::new();
        for (i, s) in states.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(ChainError::DuplicateState(i));
            }
        }
        Ok(MarkovChain {
            states,
            index,
            matrix,
            sojourn_rate,
        })
    }

    pub fn from_rows(
        states: Vec<S>,
        rows: Vec<Vec<f64>>,
        sojourn_rate: f64,
    ) -> Result<Self, ChainError> {
        let n = states.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            let cols = rows.first().map_or(0, Vec::len);
            return Err(ChainError::Shape {
                states: n,
                rows: rows.len(),
                cols,
            });
        }
        let matrix = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::new(states, matrix, sojourn_rate)
    }

    pub fn states(&self) -> &[S] {
        &self.states
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn sojourn_rate(&self) -> f64 {
        self.sojourn_rate
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, s: &S) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.matrix[(from, to)]
    }
}

/// Lumps `full` through `partition`, checking strong lumpability.
///
/// Every member of a block must send the same total probability into every
/// other block; the first member encountered is the reference.
pub fn aggregate<S, T>(
    full: &MarkovChain<S>,
    partition: &BTreeMap<S, T>,
) -> Result<MarkovChain<T>, ChainError>
where
    S: Ord + Clone + Debug,
    T: Ord + Clone + Debug,
{
    let mut block_of = Vec::with_capacity(full.len());
    for s in full.states() {
        let t = partition
            .get(s)
            .ok_or_else(|| ChainError::MissingState(format!("{s:?}")))?;
        block_of.push(t.clone());
    }
    let blocks: Vec<T> = {
        let mut b = block_of.clone();
        b.sort();
        b.dedup();
        b
    };
    let bidx: BTreeMap<&T, usize> = blocks.iter().enumerate().map(|(i, t)| (t, i)).collect();
    let m = blocks.len();

    let mut reference: Vec<Option<(usize, Vec<f64>)>> = vec![None; m];
    for i in 0..full.len() {
        let mut row = vec![0.0; m];
        for j in 0..full.len() {
            row[bidx[&block_of[j]]] += full.prob(i, j);
        }
        let b = bidx[&block_of[i]];
        match &reference[b] {
            None => reference[b] = Some((i, row)),
            Some((rep, rep_row)) => {
                for (t, (x, y)) in rep_row.iter().zip(&row).enumerate() {
                    let gap = (x - y).abs();
                    if gap > LUMP_TOL {
                        return Err(ChainError::LumpabilityViolation {
                            representative: format!("{:?}", full.states()[*rep]),
                            member: format!("{:?}", full.states()[i]),
                            target: format!("{:?}", blocks[t]),
                            gap,
                        });
                    }
                }
            }
        }
    }
    let rows = reference
        .into_iter()
        .map(|r| r.expect("every block has a member").1)
        .collect();
    MarkovChain::from_rows(blocks, rows, full.sojourn_rate())
}

#[derive(Clone, Debug, PartialEq)]
pub struct StationaryDist<S> {
    states: Vec<S>,
    pi: Vec<f64>,
}

impl<S: Ord + Clone + Debug> StationaryDist<S> {
    pub fn states(&self) -> &[S] {
        &self.states
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.pi
    }

    pub fn get(&self, s: &S) -> Option<f64> {
        self.states.iter().position(|x| x == s).map(|i| self.pi[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&S, f64)> {
        self.states.iter().zip(self.pi.iter().copied())
    }
}

/// Solves `pi P = pi`, `sum(pi) = 1` by LU with one balance equation
/// replaced by the normalisation row.
pub fn steady_state<S: Ord + Clone + Debug>(
    chain: &MarkovChain<S>,
) -> Result<StationaryDist<S>, ChainError> {
    let n = chain.len();
    if n == 0 {
        return Err(ChainError::SingularSystem);
    }
    let mut a = chain.matrix().transpose() - DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;

    let lu = a.lu();
    let u = lu.u();
    let scale = u
        .diagonal()
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(1.0);
    if u.diagonal().iter().any(|x| x.abs() <= 1e-13 * scale) {
        return Err(ChainError::SingularSystem);
    }
    let x = lu.solve(&b).ok_or(ChainError::SingularSystem)?;
    if x.iter().any(|v| !v.is_finite() || *v < -1e-12) {
        return Err(ChainError::SingularSystem);
    }
    let pi: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    let dist = StationaryDist {
        states: chain.states().to_vec(),
        pi,
    };
    let res = residual(chain, &dist);
    if res > RESIDUAL_TOL {
        return Err(ChainError::Residual(res));
    }
    Ok(dist)
}

/// `||pi P - pi||_inf`.
pub fn residual<S: Ord + Clone + Debug>(chain: &MarkovChain<S>, dist: &StationaryDist<S>) -> f64 {
    let pi = DVector::from_column_slice(&dist.pi);
    let moved = chain.matrix().transpose() * &pi;
    (moved - pi).amax()
}

/// States that know their ring (hex distance from the serving DC).
pub trait RingIndexed {
    fn ring(&self) -> u32;
}

/// Per-ring cost such as one-way latency.
pub trait RingMetric {
    fn value(&self, ring: u32) -> f64;
}

impl<F: Fn(u32) -> f64> RingMetric for F {
    fn value(&self, ring: u32) -> f64 {
        self(ring)
    }
}

/// One-way UE-to-service latency `coeff * i^2` seconds at ring `i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DelayModel {
    pub coeff: f64,
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel { coeff: 0.02 }
    }
}

impl DelayModel {
    pub fn delay(&self, ring: u32) -> f64 {
        self.coeff * (ring as f64).powi(2)
    }
}

impl RingMetric for DelayModel {
    fn value(&self, ring: u32) -> f64 {
        self.delay(ring)
    }
}

/// Probability the user is served by the optimal DC (ring 0).
pub fn prob_optimal<S: RingIndexed + Ord + Clone + Debug>(dist: &StationaryDist<S>) -> f64 {
    dist.iter()
        .filter(|(s, _)| s.ring() == 0)
        .map(|(_, p)| p)
        .sum()
}

pub fn avg_distance<S: RingIndexed + Ord + Clone + Debug>(dist: &StationaryDist<S>) -> f64 {
    dist.iter().map(|(s, p)| s.ring() as f64 * p).sum()
}

pub fn avg_delay<S: RingIndexed + Ord + Clone + Debug>(
    dist: &StationaryDist<S>,
    metric: &impl RingMetric,
) -> f64 {
    dist.iter().map(|(s, p)| metric.value(s.ring()) * p).sum()
}

/// Steady state of the lumped hex walk confined to rings `0..k`.
pub fn lumped_walk_steady_state(
    k: u32,
    params: crate::hexgrid::WalkParams,
) -> Result<StationaryDist<crate::hexgrid::AggState>, crate::hexgrid::HexError> {
    let full = crate::hexgrid::build_full_walk(k, params)?;
    let partition = crate::hexgrid::orbit_partition(k)?;
    let lumped = aggregate(&full, &partition)?;
    Ok(steady_state(&lumped)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
    struct R(u32);
    impl RingIndexed for R {
        fn ring(&self) -> u32 {
            self.0
        }
    }

    #[test]
    fn two_state_chain() {
        let c = MarkovChain::from_rows(
            vec![R(0), R(1)],
            vec![vec![0.0, 1.0], vec![4.0 / 6.0, 2.0 / 6.0]],
            1.0,
        )
        .unwrap();
        let d = steady_state(&c).unwrap();
        assert_abs_diff_eq!(d.probabilities()[0], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(d.probabilities()[1], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(prob_optimal(&d), 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(avg_distance(&d), 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(
            avg_delay(&d, &DelayModel::default()),
            0.012,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(avg_delay(&d, &|i: u32| i as f64), 0.6, epsilon = 1e-12);
    }

    #[test]
    fn single_state() {
        let c = MarkovChain::from_rows(vec![R(0)], vec![vec![1.0]], 1.0).unwrap();
        let d = steady_state(&c).unwrap();
        assert_eq!(d.probabilities(), &[1.0]);
    }

    #[test]
    fn reducible_chain_is_singular() {
        let c = MarkovChain::from_rows(vec![R(0), R(1)], vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1.0)
            .unwrap();
        assert_eq!(steady_state(&c), Err(ChainError::SingularSystem));
        let c3 = MarkovChain::from_rows(
            vec![R(0), R(1), R(2)],
            vec![
                vec![0.5, 0.5, 0.0],
                vec![0.5, 0.5, 0.0],
                vec![0.0, 0.0, 1.0],
            ],
            1.0,
        )
        .unwrap();
        assert_eq!(steady_state(&c3), Err(ChainError::SingularSystem));
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(matches!(
            MarkovChain::from_rows(vec![R(0), R(1)], vec![vec![0.5, 0.4], vec![0.0, 1.0]], 1.0),
            Err(ChainError::NotStochastic { row: 0, .. })
        ));
        assert!(matches!(
            MarkovChain::from_rows(vec![R(0), R(1)], vec![vec![1.0]], 1.0),
            Err(ChainError::Shape { .. })
        ));
        assert!(matches!(
            MarkovChain::from_rows(vec![R(0), R(0)], vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1.0),
            Err(ChainError::DuplicateState(1))
        ));
    }

    #[test]
    fn non_lumpable_partition_is_reported() {
        let c = MarkovChain::from_rows(
            vec![R(0), R(1), R(2)],
            vec![
                vec![0.0, 0.5, 0.5],
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
            ],
            1.0,
        )
        .unwrap();
        let part: BTreeMap<R, u8> = [(R(0), 0), (R(1), 1), (R(2), 1)].into_iter().collect();
        assert!(matches!(
            aggregate(&c, &part),
            Err(ChainError::LumpabilityViolation { .. })
        ));
        let missing: BTreeMap<R, u8> = [(R(0), 0)].into_iter().collect();
        assert!(matches!(
            aggregate(&c, &missing),
            Err(ChainError::MissingState(_))
        ));
    }
}
