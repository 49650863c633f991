//! Homogeneous Markov chain over a finite set of measurement graphs.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{union_graph, MeasurementGraph, WeightAssignment};

const STOCHASTIC_TOL: f64 = 1e-12;
const DENSE_STATIONARY_MAX: usize = 500;

/// Row-stochastic transition matrix; `p[(i, j)]` is the probability of moving
/// from state `i` to state `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix(DMatrix<f64>);

impl TransitionMatrix {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        if p.nrows() != p.ncols() || p.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "transition matrix must be square and non-empty, got {}x{}",
                p.nrows(),
                p.ncols()
            )));
        }
        for i in 0..p.nrows() {
            for j in 0..p.ncols() {
                let x = p[(i, j)];
                if !x.is_finite() || x < 0.0 {
                    return Err(Error::InvalidProbability { row: i, col: j });
                }
            }
            let sum = p.row(i).sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::NotStochastic { row: i, sum });
            }
        }
        Ok(Self(p))
    }

    pub fn from_row_major(n: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Dimension(format!("expected {} entries for a {n}x{n} matrix, got {}", n * n, data.len())));
        }
        Self::new(DMatrix::from_row_slice(n, n, data))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn states(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    fn support(&self) -> Vec<Vec<usize>> {
        let n = self.states();
        (0..n).map(|i| (0..n).filter(|&j| self.0[(i, j)] > 0.0).collect()).collect()
    }

    /// Strong connectivity of the directed support graph.
    pub fn is_irreducible(&self) -> bool {
        let fwd = self.support();
        let n = fwd.len();
        let mut rev = vec![Vec::new(); n];
        for (i, row) in fwd.iter().enumerate() {
            for &j in row {
                rev[j].push(i);
            }
        }
        reaches_all(&fwd) && reaches_all(&rev)
    }

    /// Period of state 0 from BFS levels; equals the chain period when irreducible.
    pub fn period(&self) -> usize {
        let adj = self.support();
        let n = adj.len();
        let mut level = vec![usize::MAX; n];
        level[0] = 0;
        let mut queue = VecDeque::from([0]);
        let mut g = 0usize;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if level[j] == usize::MAX {
                    level[j] = level[i] + 1;
                    queue.push_back(j);
                } else {
                    let diff = (level[i] + 1).abs_diff(level[j]);
                    g = gcd(g, diff);
                }
            }
        }
        g
    }

    pub fn is_aperiodic(&self) -> bool {
        self.period() == 1
    }

    pub fn is_ergodic(&self) -> bool {
        self.is_irreducible() && self.is_aperiodic()
    }

    pub fn has_positive_diagonal(&self) -> bool {
        (0..self.states()).all(|i| self.0[(i, i)] > 0.0)
    }

    /// Unique invariant distribution of an ergodic chain.
    pub fn stationary(&self) -> Result<StationaryDistribution> {
        if !self.is_ergodic() {
            return Err(Error::NotErgodic);
        }
        let n = self.states();
        let pi = if n <= DENSE_STATIONARY_MAX { self.stationary_dense()? } else { self.stationary_power()? };
        Ok(StationaryDistribution(pi))
    }

    // (P^T - I) pi = 0 with the last equation replaced by sum(pi) = 1.
    fn stationary_dense(&self) -> Result<DVector<f64>> {
        let n = self.states();
        let mut a = self.0.transpose() - DMatrix::identity(n, n);
        for j in 0..n {
            a[(n - 1, j)] = 1.0;
        }
        let mut b = DVector::zeros(n);
        b[n - 1] = 1.0;
        let lu = a.lu();
        let mut pi = lu.solve(&b).ok_or(Error::Singular { what: "stationary distribution", condition: f64::INFINITY })?;
        for x in pi.iter_mut() {
            if *x < 0.0 && *x > -1e-14 {
                *x = 0.0;
            }
        }
        let s = pi.sum();
        Ok(pi / s)
    }

    fn stationary_power(&self) -> Result<DVector<f64>> {
        let n = self.states();
        let pt = self.0.transpose();
        let mut pi = DVector::from_element(n, 1.0 / n as f64);
        // Lazy chain (I + P) / 2 shares the invariant vector and is aperiodic.
        for _ in 0..100_000 {
            let next = (&pt * &pi + &pi) * 0.5;
            let delta = (&next - &pi).amax();
            pi = next;
            if delta < 1e-15 {
                let s = pi.sum();
                return Ok(pi / s);
            }
        }
        Err(Error::NoConvergence { iterations: 100_000 })
    }

    /// Draws the successor of state `i`.
    pub fn next_state<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> usize {
        sample_categorical(self.0.row(i).iter().copied(), rng)
    }
}

fn sample_categorical<I, R>(probs: I, rng: &mut R) -> usize
where
    I: IntoIterator<Item = f64>,
    R: Rng + ?Sized,
{
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (j, p) in probs.into_iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = j;
            if u < acc {
                return j;
            }
        }
    }
    // Rounding left u past the final partial sum.
    last_positive
}

fn reaches_all(adj: &[Vec<usize>]) -> bool {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Invariant probability vector `pi` with `pi P = pi`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution(DVector<f64>);

impl StationaryDistribution {
    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.iter().copied().collect()
    }
}

/// Where a sample path starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialState {
    Index(usize),
    Stationary,
}

/// Graph-valued Markov chain: the state space, its transition matrix, and
/// the weight matrix used while in each state.
#[derive(Debug, Clone)]
pub struct TopologyChain {
    states: Vec<MeasurementGraph>,
    transition: TransitionMatrix,
    weights: Vec<WeightAssignment>,
}

impl TopologyChain {
    pub fn new(
        states: Vec<MeasurementGraph>,
        transition: TransitionMatrix,
        weights: Vec<WeightAssignment>,
    ) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Dimension("chain needs at least one state".into()));
        }
        if states.len() != transition.states() || weights.len() != states.len() {
            return Err(Error::Dimension(format!(
                "{} graphs, {} weight sets, {}x{} transition matrix",
                states.len(),
                weights.len(),
                transition.states(),
                transition.states()
            )));
        }
        let partition = states[0].partition();
        for (g, w) in states.iter().zip(&weights) {
            if g.partition() != partition {
                return Err(Error::PartitionMismatch);
            }
            w.check_bound(g)?;
        }
        Ok(Self { states, transition, weights })
    }

    /// Unit weights on every state.
    pub fn with_unit_weights(states: Vec<MeasurementGraph>, transition: TransitionMatrix) -> Result<Self> {
        let weights = states.iter().map(WeightAssignment::unit).collect();
        Self::new(states, transition, weights)
    }

    pub fn states(&self) -> &[MeasurementGraph] {
        &self.states
    }

    pub fn weights(&self) -> &[WeightAssignment] {
        &self.weights
    }

    pub fn transition(&self) -> &TransitionMatrix {
        &self.transition
    }

    pub fn partition(&self) -> crate::graph::NodePartition {
        self.states[0].partition()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn union(&self) -> MeasurementGraph {
        union_graph(&self.states).expect("states share a partition")
    }

    pub fn validate(&self) -> ValidationReport {
        ValidationReport {
            row_stochastic: true,
            irreducible: self.transition.is_irreducible(),
            aperiodic: self.transition.is_aperiodic(),
            positive_diagonal: self.transition.has_positive_diagonal(),
            union_connected: self.union().is_connected(),
            references_reach_all: self.union().references_reach_all(),
        }
    }

    pub fn sample_path<R: Rng + ?Sized>(&self, length: usize, initial: InitialState, rng: &mut R) -> Result<Vec<usize>> {
        let n = self.len();
        let mut state = match initial {
            InitialState::Index(i) if i < n => i,
            InitialState::Index(i) => return Err(Error::StateIndex { index: i, states: n }),
            InitialState::Stationary => {
                let pi = self.transition.stationary()?;
                sample_categorical(pi.0.iter().copied(), rng)
            }
        };
        let mut path = Vec::with_capacity(length);
        for k in 0..length {
            if k > 0 {
                state = self.transition.next_state(state, rng);
            }
            path.push(state);
        }
        Ok(path)
    }
}

/// Hypothesis flags for the convergence criterion. Row-stochasticity failures
/// are rejected at construction, so that flag is always set on a built chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub row_stochastic: bool,
    pub irreducible: bool,
    pub aperiodic: bool,
    pub positive_diagonal: bool,
    pub union_connected: bool,
    /// Every node shares a union component with a reference node.
    pub references_reach_all: bool,
}

impl ValidationReport {
    pub fn ergodic(&self) -> bool {
        self.irreducible && self.aperiodic
    }

    /// Ergodic with positive self-transition probabilities.
    pub fn chain_hypotheses_hold(&self) -> bool {
        self.row_stochastic && self.ergodic() && self.positive_diagonal
    }
}
