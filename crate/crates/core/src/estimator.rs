//! Distributed update law, measurement generation, and error traces.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{EdgeWeights, MeasurementGraph, NodePartition, WeightAssignment};
use crate::topology::{InitialState, TopologyChain};

/// Moments of the noise on one unordered pair, oriented from the lower index
/// to the higher one: `eps_{u,v}` for `u < v` has this mean and variance and
/// `eps_{v,u} = -eps_{u,v}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairNoise {
    pub mean: f64,
    pub variance: f64,
}

impl PairNoise {
    pub const fn new(mean: f64, variance: f64) -> Self {
        Self { mean, variance }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.variance == 0.0 {
            return self.mean;
        }
        let z: f64 = rng.sample(StandardNormal);
        self.mean + self.variance.sqrt() * z
    }
}

/// Gaussian per-pair measurement noise, independent across pairs and steps.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    nodes: usize,
    default: PairNoise,
    overrides: BTreeMap<(usize, usize), PairNoise>,
}

impl NoiseModel {
    pub fn uniform(nodes: usize, noise: PairNoise) -> Self {
        Self { nodes, default: noise, overrides: BTreeMap::new() }
    }

    pub fn noiseless(nodes: usize) -> Self {
        Self::uniform(nodes, PairNoise::new(0.0, 0.0))
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// Sets the moments for the pair, given in either order. When `u > v`
    /// the supplied mean is for `eps_{u,v}` and is stored negated.
    pub fn set_pair(&mut self, u: usize, v: usize, noise: PairNoise) {
        let oriented = if u < v { noise } else { PairNoise::new(-noise.mean, noise.variance) };
        self.overrides.insert((u.min(v), u.max(v)), oriented);
    }

    /// Moments for `eps_{lo,hi}`, `lo < hi`.
    pub fn pair(&self, lo: usize, hi: usize) -> PairNoise {
        debug_assert!(lo < hi);
        self.overrides.get(&(lo, hi)).copied().unwrap_or(self.default)
    }

    fn validate(&self) -> Result<()> {
        for p in std::iter::once(&self.default).chain(self.overrides.values()) {
            if !p.mean.is_finite() || !p.variance.is_finite() || p.variance < 0.0 {
                return Err(Error::Parameter(format!("invalid noise moments {p:?}")));
            }
        }
        Ok(())
    }

    /// Mean `gamma` and second moment `Gamma = E[eps eps^T]` of the stacked
    /// noise vector in the layout of [`NodePartition::noise_index`].
    ///
    /// Every coordinate is defined, including pairs that are not edges in a
    /// given mode; those multiply zero columns of `B_b`.
    pub fn moments(&self, partition: NodePartition) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if partition.len() != self.nodes {
            return Err(Error::Dimension(format!(
                "noise model covers {} nodes, partition has {}",
                self.nodes,
                partition.len()
            )));
        }
        self.validate()?;
        let n = partition.len();
        let dim = partition.noise_dim();
        // (pair, sign) per coordinate
        let mut coords = Vec::with_capacity(dim);
        for u in partition.basic_nodes() {
            for v in (0..n).filter(|&v| v != u) {
                let sign = if u < v { 1.0 } else { -1.0 };
                coords.push(((u.min(v), u.max(v)), sign));
            }
        }
        let gamma = DVector::from_iterator(dim, coords.iter().map(|&((a, b), s)| s * self.pair(a, b).mean));
        let mut big = DMatrix::zeros(dim, dim);
        for (i, &(pi, si)) in coords.iter().enumerate() {
            for (j, &(pj, sj)) in coords.iter().enumerate() {
                let mi = self.pair(pi.0, pi.1);
                let mj = self.pair(pj.0, pj.1);
                let mut second = mi.mean * mj.mean;
                if pi == pj {
                    second += mi.variance;
                }
                big[(i, j)] = si * sj * second;
            }
        }
        Ok((gamma, big))
    }
}

/// Relative measurements on the edges of one graph, shared antisymmetrically.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasurementSet {
    // zeta_{lo,hi} keyed by (lo, hi)
    values: BTreeMap<(usize, usize), f64>,
}

impl MeasurementSet {
    /// Stores `zeta_{u,v}`; the mirrored value `zeta_{v,u}` is its negation.
    pub fn insert(&mut self, u: usize, v: usize, zeta: f64) {
        if u < v {
            self.values.insert((u, v), zeta);
        } else {
            self.values.insert((v, u), -zeta);
        }
    }

    /// `zeta_{u,v}` if the pair was measured.
    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        if u < v {
            self.values.get(&(u, v)).copied()
        } else {
            self.values.get(&(v, u)).map(|z| -z)
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Stacked noise vector implied by these measurements and the true
    /// variables; coordinates for unmeasured pairs are zero.
    pub fn noise_vector(&self, partition: NodePartition, x_true: &[f64]) -> DVector<f64> {
        let mut eps = DVector::zeros(partition.noise_dim());
        for u in partition.basic_nodes() {
            for v in (0..partition.len()).filter(|&v| v != u) {
                if let Some(z) = self.get(u, v) {
                    eps[partition.noise_index(u, v)] = z - (x_true[u] - x_true[v]);
                }
            }
        }
        eps
    }
}

/// One relative measurement per edge, taken by the lower-indexed endpoint.
pub fn generate_measurements<R: Rng + ?Sized>(
    g: &MeasurementGraph,
    x_true: &[f64],
    noise: &NoiseModel,
    rng: &mut R,
) -> MeasurementSet {
    let mut m = MeasurementSet::default();
    for (u, v) in g.edges() {
        let eps = noise.pair(u, v).sample(rng);
        m.values.insert((u, v), x_true[u] - x_true[v] + eps);
    }
    m
}

/// Estimates held by every node at iteration `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub x_hat: Vec<f64>,
    pub k: usize,
}

impl EstimatorState {
    /// Basic nodes start from `init`; reference nodes are pinned to `x_true`.
    pub fn new(partition: NodePartition, init: &[f64], x_true: &[f64]) -> Result<Self> {
        let n = partition.len();
        if init.len() != n || x_true.len() != n {
            return Err(Error::Dimension(format!(
                "{n} nodes but {} initial estimates and {} true values",
                init.len(),
                x_true.len()
            )));
        }
        let x_hat = (0..n).map(|u| if partition.is_reference(u) { x_true[u] } else { init[u] }).collect();
        Ok(Self { x_hat, k: 0 })
    }

    /// Errors `x_hat - x` on basic nodes.
    pub fn errors(&self, partition: NodePartition, x_true: &[f64]) -> Vec<f64> {
        partition.basic_nodes().map(|u| self.x_hat[u] - x_true[u]).collect()
    }
}

/// Applies the weighted-average update to every basic node.
///
/// A basic node with neighbors moves to the weighted average of its own
/// estimate and the neighbor-implied values `x_hat_v + zeta_{u,v}`; without
/// neighbors it keeps its estimate. Reference estimates never change.
pub fn update_step<W: EdgeWeights + ?Sized>(
    state: &EstimatorState,
    g: &MeasurementGraph,
    w: &W,
    m: &MeasurementSet,
) -> Result<EstimatorState> {
    let p = g.partition();
    let n = p.len();
    if state.x_hat.len() != n {
        return Err(Error::Dimension(format!("state has {} entries, graph {n} nodes", state.x_hat.len())));
    }
    let x = &state.x_hat;
    let mut num = vec![0.0; n];
    let mut den = vec![0.0; n];
    let mut has_neighbor = vec![false; n];
    for (u, v) in g.edges() {
        let z = m.get(u, v).ok_or(Error::MissingMeasurement(u, v))?;
        if !p.is_reference(u) {
            let wuv = w.weight(u, v);
            num[u] += wuv * (x[v] + z);
            den[u] += wuv;
            has_neighbor[u] = true;
        }
        if !p.is_reference(v) {
            let wvu = w.weight(v, u);
            num[v] += wvu * (x[u] - z);
            den[v] += wvu;
            has_neighbor[v] = true;
        }
    }
    let x_hat = (0..n)
        .map(|u| {
            if p.is_reference(u) || !has_neighbor[u] {
                x[u]
            } else {
                let wuu = w.weight(u, u);
                (wuu * x[u] + num[u]) / (wuu + den[u])
            }
        })
        .collect();
    Ok(EstimatorState { x_hat, k: state.k + 1 })
}

/// Removes every edge touching an inactive node.
pub fn apply_async_mask(g: &MeasurementGraph, active: &[bool]) -> MeasurementGraph {
    g.masked(active)
}

/// Anything that can produce the measurement graph for each global tick.
pub trait GraphSource {
    /// Advances to iteration `k` and returns the graph and weights in force.
    fn graph_at<R: Rng + ?Sized>(&mut self, k: usize, rng: &mut R) -> Result<(&MeasurementGraph, &dyn EdgeWeights)>;

    /// Mode index of the last returned graph, when the source is a finite chain.
    fn mode(&self) -> Option<usize> {
        None
    }
}

/// Weight sets used before the switching weights settle.
#[derive(Debug, Clone)]
pub struct EarlyWeights {
    /// First iteration at which the chain's own weight sets apply.
    pub k0: usize,
    /// One weight set per chain state, used for `k < k0`.
    pub per_state: Vec<WeightAssignment>,
}

/// Graph source driven by a [`TopologyChain`].
pub struct ChainSource<'a> {
    chain: &'a TopologyChain,
    initial: InitialState,
    early: Option<&'a EarlyWeights>,
    state: Option<usize>,
}

impl<'a> ChainSource<'a> {
    pub fn new(chain: &'a TopologyChain, initial: InitialState) -> Self {
        Self { chain, initial, early: None, state: None }
    }

    pub fn with_early_weights(mut self, early: &'a EarlyWeights) -> Self {
        self.early = Some(early);
        self
    }
}

impl GraphSource for ChainSource<'_> {
    fn graph_at<R: Rng + ?Sized>(&mut self, k: usize, rng: &mut R) -> Result<(&MeasurementGraph, &dyn EdgeWeights)> {
        let next = match self.state {
            None => self.chain.sample_path(1, self.initial, rng)?[0],
            Some(s) => self.chain.transition().next_state(s, rng),
        };
        self.state = Some(next);
        let weights: &dyn EdgeWeights = match self.early {
            Some(e) if k < e.k0 => &e.per_state[next],
            _ => &self.chain.weights()[next],
        };
        Ok((&self.chain.states()[next], weights))
    }

    fn mode(&self) -> Option<usize> {
        self.state
    }
}

/// Per-iteration snapshots of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    /// `estimates[k]` is the full estimate vector at iteration `k`, `k = 0..=steps`.
    pub estimates: Vec<Vec<f64>>,
    /// `errors[k]` holds the basic-node errors at iteration `k`.
    pub errors: Vec<Vec<f64>>,
    /// Mode index used between `k` and `k + 1`, when known.
    pub modes: Vec<usize>,
}

/// Core simulation loop. `observe` sees the state at every iteration
/// including `k = 0` and `k = steps`.
pub fn simulate<S, R, F>(
    source: &mut S,
    noise: &NoiseModel,
    x_true: &[f64],
    init: &[f64],
    steps: usize,
    rng: &mut R,
    mut observe: F,
) -> Result<()>
where
    S: GraphSource + ?Sized,
    R: Rng + ?Sized,
    F: FnMut(&EstimatorState, Option<usize>),
{
    let mut partition = None;
    let mut state: Option<EstimatorState> = None;
    for k in 0..steps {
        let (g, w) = source.graph_at(k, rng)?;
        let p = g.partition();
        if noise.nodes() != p.len() {
            return Err(Error::Dimension(format!("noise model covers {} nodes, graph has {}", noise.nodes(), p.len())));
        }
        if state.is_none() {
            let s = EstimatorState::new(p, init, x_true)?;
            observe(&s, None);
            state = Some(s);
            partition = Some(p);
        } else if partition != Some(p) {
            return Err(Error::PartitionMismatch);
        }
        let m = generate_measurements(g, x_true, noise, rng);
        let next = update_step(state.as_ref().expect("initialised"), g, w, &m)?;
        let mode = source.mode();
        observe(&next, mode);
        state = Some(next);
    }
    Ok(())
}

/// Runs the estimator over a chain-driven topology and records the trace.
pub fn run_scenario<R: Rng + ?Sized>(
    chain: &TopologyChain,
    noise: &NoiseModel,
    x_true: &[f64],
    init: &[f64],
    steps: usize,
    initial: InitialState,
    rng: &mut R,
) -> Result<TraceRecord> {
    let mut source = ChainSource::new(chain, initial);
    record(&mut source, chain.partition(), noise, x_true, init, steps, rng)
}

/// Runs any graph source and records the full trace.
pub fn record<S: GraphSource + ?Sized, R: Rng + ?Sized>(
    source: &mut S,
    partition: NodePartition,
    noise: &NoiseModel,
    x_true: &[f64],
    init: &[f64],
    steps: usize,
    rng: &mut R,
) -> Result<TraceRecord> {
    // A zero-step run still reports the initial state.
    let initial = EstimatorState::new(partition, init, x_true)?;
    let mut trace = TraceRecord {
        estimates: vec![initial.x_hat.clone()],
        errors: vec![initial.errors(partition, x_true)],
        modes: Vec::with_capacity(steps),
    };
    simulate(source, noise, x_true, init, steps, rng, |s, mode| {
        if s.k == 0 {
            return;
        }
        trace.estimates.push(s.x_hat.clone());
        trace.errors.push(s.errors(partition, x_true));
        if let Some(m) = mode {
            trace.modes.push(m);
        }
    })?;
    Ok(trace)
}
