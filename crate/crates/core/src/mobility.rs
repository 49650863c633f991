//! Node motion models and range-based graph generation.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::estimator::GraphSource;
use crate::graph::{EdgeWeights, MeasurementGraph, NodePartition, UnitWeights};

/// A motion model that can be stepped and queried for pairwise distances.
pub trait MobilityModel {
    fn node_count(&self) -> usize;

    /// Advances every node by one iteration.
    fn step<R: Rng + ?Sized>(&mut self, rng: &mut R);

    /// Distance used by the connectivity rule.
    fn distance(&self, u: usize, v: usize) -> f64;

    /// Coordinates of node `u`.
    fn coordinates(&self, u: usize) -> Vec<f64>;
}

/// Random walk on the unit sphere: perturb, then project back.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereWalk {
    positions: Vec<[f64; 3]>,
    sigma: f64,
}

impl SphereWalk {
    pub fn new(positions: Vec<[f64; 3]>, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(Error::Parameter(format!("step noise must be nonnegative, got {sigma}")));
        }
        let positions = positions
            .into_iter()
            .map(|p| project(p).ok_or_else(|| Error::Parameter("zero vector cannot be projected onto the sphere".into())))
            .collect::<Result<_>>()?;
        Ok(Self { positions, sigma })
    }

    /// Nodes placed uniformly at random on the sphere.
    pub fn random<R: Rng + ?Sized>(n: usize, sigma: f64, rng: &mut R) -> Result<Self> {
        let positions = (0..n).map(|_| random_unit(rng)).collect();
        Self::new(positions, sigma)
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }
}

/// Projection onto the unit sphere; `None` for the zero vector.
pub fn project(x: [f64; 3]) -> Option<[f64; 3]> {
    let norm = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    (norm > 0.0 && norm.is_finite()).then(|| [x[0] / norm, x[1] / norm, x[2] / norm])
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let x = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        if let Some(p) = project(x) {
            return p;
        }
    }
}

impl MobilityModel for SphereWalk {
    fn node_count(&self) -> usize {
        self.positions.len()
    }

    fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if self.sigma == 0.0 {
            return;
        }
        for p in &mut self.positions {
            *p = loop {
                let moved = [
                    p[0] + self.sigma * rng.sample::<f64, _>(StandardNormal),
                    p[1] + self.sigma * rng.sample::<f64, _>(StandardNormal),
                    p[2] + self.sigma * rng.sample::<f64, _>(StandardNormal),
                ];
                if let Some(q) = project(moved) {
                    break q;
                }
            };
        }
    }

    /// Great-circle distance on the unit sphere.
    fn distance(&self, u: usize, v: usize) -> f64 {
        let (a, b) = (self.positions[u], self.positions[v]);
        let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        dot.clamp(-1.0, 1.0).acos()
    }

    fn coordinates(&self, u: usize) -> Vec<f64> {
        self.positions[u].to_vec()
    }
}

/// Parameters of the random waypoint model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RwpParams {
    pub width: f64,
    pub height: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Pause at each waypoint, seconds.
    pub pause: f64,
    /// Seconds of motion per iteration.
    pub dt: f64,
}

impl RwpParams {
    fn validate(&self) -> Result<()> {
        let ok = self.width > 0.0
            && self.height > 0.0
            && self.v_min > 0.0
            && self.v_max >= self.v_min
            && self.pause >= 0.0
            && self.dt >= 0.0
            && [self.width, self.height, self.v_max, self.pause, self.dt].iter().all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid random waypoint parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RwpPhase {
    Paused { remaining: f64 },
    Moving { destination: [f64; 2], speed: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomWaypoint {
    params: RwpParams,
    positions: Vec<[f64; 2]>,
    phases: Vec<RwpPhase>,
}

impl RandomWaypoint {
    /// Nodes start at uniform positions and pause there first.
    pub fn random<R: Rng + ?Sized>(n: usize, params: RwpParams, rng: &mut R) -> Result<Self> {
        params.validate()?;
        let positions = (0..n).map(|_| uniform_point(&params, rng)).collect();
        let phases = vec![RwpPhase::Paused { remaining: params.pause }; n];
        Ok(Self { params, positions, phases })
    }

    pub fn from_state(params: RwpParams, positions: Vec<[f64; 2]>, phases: Vec<RwpPhase>) -> Result<Self> {
        params.validate()?;
        if positions.len() != phases.len() {
            return Err(Error::Dimension("one phase per node is required".into()));
        }
        for (p, ph) in positions.iter().zip(&phases) {
            if !inside(&params, *p) {
                return Err(Error::Parameter(format!("position {p:?} outside the region")));
            }
            if let RwpPhase::Moving { destination, speed } = ph {
                if !inside(&params, *destination) || *speed < params.v_min || *speed > params.v_max {
                    return Err(Error::Parameter(format!("invalid moving phase {ph:?}")));
                }
            }
        }
        Ok(Self { params, positions, phases })
    }

    pub fn params(&self) -> &RwpParams {
        &self.params
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn phases(&self) -> &[RwpPhase] {
        &self.phases
    }
}

fn uniform_point<R: Rng + ?Sized>(p: &RwpParams, rng: &mut R) -> [f64; 2] {
    [rng.random::<f64>() * p.width, rng.random::<f64>() * p.height]
}

fn inside(p: &RwpParams, x: [f64; 2]) -> bool {
    (0.0..=p.width).contains(&x[0]) && (0.0..=p.height).contains(&x[1])
}

impl MobilityModel for RandomWaypoint {
    fn node_count(&self) -> usize {
        self.positions.len()
    }

    /// Each node spends `dt` seconds of budget: finishing a pause, picking a
    /// waypoint, travelling, and pausing again as many times as fit.
    fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let params = self.params;
        for (pos, phase) in self.positions.iter_mut().zip(self.phases.iter_mut()) {
            let mut budget = params.dt;
            // A zero pause with a zero-length leg would never spend budget.
            let mut legs = 0;
            while budget > 0.0 && legs < 1000 {
                match *phase {
                    RwpPhase::Paused { remaining } => {
                        if remaining > budget {
                            *phase = RwpPhase::Paused { remaining: remaining - budget };
                            budget = 0.0;
                        } else {
                            budget -= remaining;
                            let destination = uniform_point(&params, rng);
                            let speed = rng.random_range(params.v_min..=params.v_max);
                            *phase = RwpPhase::Moving { destination, speed };
                        }
                    }
                    RwpPhase::Moving { destination, speed } => {
                        let (dx, dy) = (destination[0] - pos[0], destination[1] - pos[1]);
                        let dist = dx.hypot(dy);
                        let reach = speed * budget;
                        if reach >= dist {
                            *pos = destination;
                            budget -= dist / speed;
                            *phase = RwpPhase::Paused { remaining: params.pause };
                            legs += 1;
                        } else {
                            let f = reach / dist;
                            *pos = [pos[0] + f * dx, pos[1] + f * dy];
                            budget = 0.0;
                        }
                    }
                }
            }
        }
    }

    fn distance(&self, u: usize, v: usize) -> f64 {
        let (a, b) = (self.positions[u], self.positions[v]);
        (a[0] - b[0]).hypot(a[1] - b[1])
    }

    fn coordinates(&self, u: usize) -> Vec<f64> {
        self.positions[u].to_vec()
    }
}

/// Disk connectivity with independent link failures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConnectivityRule {
    pub range: f64,
    pub link_fail_prob: f64,
}

impl ConnectivityRule {
    pub fn new(range: f64, link_fail_prob: f64) -> Result<Self> {
        if !(range > 0.0) || !(0.0..=1.0).contains(&link_fail_prob) {
            return Err(Error::Parameter(format!(
                "range must be positive and failure probability in [0, 1], got {range} and {link_fail_prob}"
            )));
        }
        Ok(Self { range, link_fail_prob })
    }
}

/// Graph induced by the current positions. Every in-range pair consumes one
/// uniform draw from `draw`; the link survives when the draw is at least the
/// failure probability.
pub fn graph_with_draws<M, F>(model: &M, rule: &ConnectivityRule, partition: NodePartition, mut draw: F) -> Result<MeasurementGraph>
where
    M: MobilityModel + ?Sized,
    F: FnMut() -> f64,
{
    let n = model.node_count();
    if n != partition.len() {
        return Err(Error::Dimension(format!("{n} mobile nodes, partition has {}", partition.len())));
    }
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if model.distance(u, v) <= rule.range && draw() >= rule.link_fail_prob {
                edges.push((u, v));
            }
        }
    }
    MeasurementGraph::new(partition, edges)
}

pub fn graph_from_positions<M, R>(model: &M, rule: &ConnectivityRule, partition: NodePartition, rng: &mut R) -> Result<MeasurementGraph>
where
    M: MobilityModel + ?Sized,
    R: Rng + ?Sized,
{
    graph_with_draws(model, rule, partition, || rng.random::<f64>())
}

/// Graph at each of `steps` iterations; the model advances between graphs.
pub fn record_graph_sequence<M, R>(
    model: &mut M,
    rule: &ConnectivityRule,
    partition: NodePartition,
    steps: usize,
    rng: &mut R,
) -> Result<Vec<MeasurementGraph>>
where
    M: MobilityModel,
    R: Rng + ?Sized,
{
    let mut out = Vec::with_capacity(steps);
    for k in 0..steps {
        if k > 0 {
            model.step(rng);
        }
        out.push(graph_from_positions(model, rule, partition, rng)?);
    }
    Ok(out)
}

/// Graph source for the estimator: unit weights on a mobility-induced graph.
pub struct MobilitySource<M> {
    model: M,
    rule: ConnectivityRule,
    partition: NodePartition,
    current: MeasurementGraph,
}

impl<M: MobilityModel> MobilitySource<M> {
    pub fn new(model: M, rule: ConnectivityRule, partition: NodePartition) -> Result<Self> {
        if model.node_count() != partition.len() {
            return Err(Error::Dimension(format!(
                "{} mobile nodes, partition has {}",
                model.node_count(),
                partition.len()
            )));
        }
        Ok(Self { model, rule, partition, current: MeasurementGraph::edgeless(partition) })
    }

    pub fn model(&self) -> &M {
        &self.model
    }
}

impl<M: MobilityModel> GraphSource for MobilitySource<M> {
    fn graph_at<R: Rng + ?Sized>(&mut self, k: usize, rng: &mut R) -> Result<(&MeasurementGraph, &dyn EdgeWeights)> {
        if k > 0 {
            self.model.step(rng);
        }
        self.current = graph_from_positions(&self.model, &self.rule, self.partition, rng)?;
        Ok((&self.current, &UnitWeights))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn rwp(width: f64, dt: f64) -> RwpParams {
        RwpParams { width, height: width, v_min: 10.0, v_max: 50.0, pause: 0.1, dt }
    }

    #[test]
    fn projection() {
        assert_eq!(project([2.0, 0.0, 0.0]), Some([1.0, 0.0, 0.0]));
        assert_eq!(project([0.0, 0.0, 0.0]), None);
    }

    #[test]
    fn sphere_walk_without_noise_is_static() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut w = SphereWalk::random(5, 0.0, &mut rng).unwrap();
        let before = w.clone();
        w.step(&mut rng);
        assert_eq!(w, before);
    }

    #[test]
    fn sphere_positions_stay_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut w = SphereWalk::random(4, 0.3, &mut rng).unwrap();
        for _ in 0..10_000 {
            w.step(&mut rng);
            for p in w.positions() {
                let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                assert!((norm - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rwp_zero_dt_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = RandomWaypoint::random(6, rwp(100.0, 0.0), &mut rng).unwrap();
        let before = m.clone();
        m.step(&mut rng);
        assert_eq!(m, before);
    }

    #[test]
    fn rwp_arrival_starts_pause() {
        let params = rwp(100.0, 1.0);
        let phases = vec![RwpPhase::Moving { destination: [30.0, 10.0], speed: 20.0 }];
        let mut m = RandomWaypoint::from_state(params, vec![[10.0, 10.0]], phases).unwrap();
        m.step(&mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(m.positions()[0], [30.0, 10.0]);
        assert_eq!(m.phases()[0], RwpPhase::Paused { remaining: 0.1 });
    }

    #[test]
    fn rwp_partial_leg_moves_speed_times_dt() {
        let params = rwp(100.0, 1.0);
        let phases = vec![RwpPhase::Moving { destination: [90.0, 10.0], speed: 25.0 }];
        let mut m = RandomWaypoint::from_state(params, vec![[10.0, 10.0]], phases).unwrap();
        m.step(&mut ChaCha8Rng::seed_from_u64(0));
        assert!((m.positions()[0][0] - 35.0).abs() < 1e-12);
    }

    #[test]
    fn rwp_stays_in_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = rwp(10.0, 1.0);
        let mut m = RandomWaypoint::random(3, params, &mut rng).unwrap();
        for _ in 0..1_000_000 {
            m.step(&mut rng);
            for p in m.positions() {
                assert!(inside(&params, *p), "{p:?}");
            }
            for ph in m.phases() {
                if let RwpPhase::Moving { speed, .. } = ph {
                    assert!((10.0..=50.0).contains(speed));
                }
            }
        }
    }

    struct Fixed(Vec<[f64; 2]>);
    impl MobilityModel for Fixed {
        fn node_count(&self) -> usize {
            self.0.len()
        }
        fn step<R: Rng + ?Sized>(&mut self, _rng: &mut R) {}
        fn distance(&self, u: usize, v: usize) -> f64 {
            (self.0[u][0] - self.0[v][0]).hypot(self.0[u][1] - self.0[v][1])
        }
        fn coordinates(&self, u: usize) -> Vec<f64> {
            self.0[u].to_vec()
        }
    }

    #[test]
    fn disk_rule_examples() {
        let part = NodePartition::new(1, 1).unwrap();
        let m = Fixed(vec![[0.0, 0.0], [50.0, 0.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = graph_from_positions(&m, &ConnectivityRule::new(100.0, 0.0).unwrap(), part, &mut rng).unwrap();
        assert!(g.has_edge(0, 1));
        let g = graph_from_positions(&m, &ConnectivityRule::new(100.0, 1.0).unwrap(), part, &mut rng).unwrap();
        assert_eq!(g.edge_count(), 0);
        let g = graph_from_positions(&m, &ConnectivityRule::new(40.0, 0.0).unwrap(), part, &mut rng).unwrap();
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn link_failure_frequency() {
        let part = NodePartition::new(1, 1).unwrap();
        let m = Fixed(vec![[0.0, 0.0], [50.0, 0.0]]);
        let rule = ConnectivityRule::new(100.0, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let trials = 100_000;
        let hits = (0..trials).filter(|_| graph_from_positions(&m, &rule, part, &mut rng).unwrap().has_edge(0, 1)).count();
        let freq = hits as f64 / trials as f64;
        assert!((freq - 0.9).abs() < 0.01, "{freq}");
    }

    #[test]
    fn graph_is_reproducible_from_positions_and_draws() {
        let part = NodePartition::new(5, 1).unwrap();
        let rule = ConnectivityRule::new(1.2, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut walk = SphereWalk::random(6, 0.2, &mut rng).unwrap();
        for _ in 0..50 {
            walk.step(&mut rng);
            let mut draws = Vec::new();
            let g = graph_with_draws(&walk, &rule, part, || {
                let d = rng.random::<f64>();
                draws.push(d);
                d
            })
            .unwrap();
            let mut replay = draws.into_iter();
            let again = graph_with_draws(&walk.clone(), &rule, part, || replay.next().unwrap()).unwrap();
            assert_eq!(g, again);
        }
    }

    #[test]
    fn static_positions_give_constant_sequence() {
        let part = NodePartition::new(2, 1).unwrap();
        let mut m = Fixed(vec![[0.0, 0.0], [5.0, 0.0], [20.0, 0.0]]);
        let rule = ConnectivityRule::new(10.0, 0.0).unwrap();
        let seq = record_graph_sequence(&mut m, &rule, part, 20, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert!(seq.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn three_node_rwp_sees_at_most_eight_graphs() {
        let part = NodePartition::new(2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut m = RandomWaypoint::random(3, rwp(10.0, 0.1), &mut rng).unwrap();
        let rule = ConnectivityRule::new(5.0, 0.0).unwrap();
        let seq = record_graph_sequence(&mut m, &rule, part, 20_000, &mut rng).unwrap();
        let distinct: BTreeSet<_> = seq.iter().map(|g| g.canonical_key()).collect();
        assert!(distinct.len() <= 8);
        assert!(distinct.len() > 1);
    }

    #[test]
    fn sequence_replays_with_seed() {
        let part = NodePartition::new(3, 1).unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(10);
            let mut m = RandomWaypoint::random(4, rwp(50.0, 1.0), &mut rng).unwrap();
            let rule = ConnectivityRule::new(20.0, 0.1).unwrap();
            record_graph_sequence(&mut m, &rule, part, 200, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn disk_graph_is_order_symmetric() {
        let m = Fixed(vec![[0.0, 0.0], [3.0, 4.0], [9.0, 0.0]]);
        for u in 0..3 {
            for v in 0..3 {
                assert_eq!(m.distance(u, v), m.distance(v, u));
            }
        }
    }
}
