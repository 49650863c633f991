//! Scenario files.
//!
//! Scenarios are TOML documents. Node ids in files are 1-based; basic nodes
//! come first and reference nodes last. Matrices are row-major arrays.
//! See `scenarios/` in the repository for complete examples.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::clock::{self, Clock};
use crate::error::{Error, Result};
use crate::estimator::{EarlyWeights, NoiseModel, PairNoise};
use crate::graph::{MeasurementGraph, NodePartition, WeightAssignment};
use crate::mobility::{ConnectivityRule, RwpParams};
use crate::topology::{InitialState, TopologyChain, TransitionMatrix};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub steps: usize,
    #[serde(default = "one")]
    pub trials: usize,
    /// Worker threads for Monte Carlo; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    /// Seconds per global iteration; metadata only.
    #[serde(default)]
    pub tick_seconds: Option<f64>,
    pub nodes: NodesSpec,
    #[serde(default)]
    pub clocks: Option<ClockSpec>,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub topology: TopologySpec,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default)]
    pub order_test: OrderTestSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodesSpec {
    pub basic: usize,
    pub reference: usize,
    /// True node variables; ignored when `[clocks]` is present.
    #[serde(default)]
    pub true_values: Option<Vec<f64>>,
    /// Defaults to all zeros.
    #[serde(default)]
    pub initial_estimates: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockChannel {
    Skew,
    Offset,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockSpec {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub channel: ClockChannel,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub mean: f64,
    #[serde(default)]
    pub variance: f64,
    #[serde(default, rename = "pair")]
    pub pairs: Vec<PairNoiseSpec>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { mean: 0.0, variance: 0.0, pairs: Vec::new() }
    }
}

/// Moments of `eps_{a,b}` for `nodes = [a, b]`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairNoiseSpec {
    pub nodes: [usize; 2],
    #[serde(default)]
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum InitialSpec {
    Index(usize),
    Named(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TopologySpec {
    Chain {
        transition: Vec<f64>,
        /// One edge list per state.
        states: Vec<Vec<[usize; 2]>>,
        /// Optional per-state row-major weight matrices; unit weights otherwise.
        #[serde(default)]
        weights: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        k0: usize,
        #[serde(default)]
        early_weights: Option<Vec<Vec<f64>>>,
        /// 1-based state index or "stationary".
        #[serde(default)]
        initial_state: Option<InitialSpec>,
    },
    Rwp {
        width: f64,
        height: f64,
        v_min: f64,
        v_max: f64,
        pause: f64,
        #[serde(default = "unit_dt")]
        dt: f64,
        range: f64,
        #[serde(default)]
        link_fail_prob: f64,
    },
    Sphere {
        sigma: f64,
        range: f64,
        #[serde(default)]
        link_fail_prob: f64,
    },
}

fn unit_dt() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    #[serde(default = "default_cap")]
    pub size_cap: usize,
    /// Fraction of the final iterations used as the comparison window.
    #[serde(default = "default_window")]
    pub window_fraction: f64,
    #[serde(default = "default_var_tol")]
    pub variance_rel_tol: f64,
    #[serde(default = "default_se_factor")]
    pub mean_se_factor: f64,
    #[serde(default)]
    pub dump_matrices: bool,
}

fn default_cap() -> usize {
    crate::mjls::DEFAULT_SIZE_CAP
}
fn default_window() -> f64 {
    0.1
}
fn default_var_tol() -> f64 {
    0.1
}
fn default_se_factor() -> f64 {
    3.0
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            size_cap: default_cap(),
            window_fraction: default_window(),
            variance_rel_tol: default_var_tol(),
            mean_se_factor: default_se_factor(),
            dump_matrices: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderTestSpec {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Graph sequence file, relative to the config file. When absent the
    /// sequence is generated from the mobility topology.
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub steps: Option<usize>,
    /// Base for reported entropies; natural log when absent.
    #[serde(default)]
    pub display_base: Option<f64>,
}

fn default_threshold() -> f64 {
    crate::order::DEFAULT_THRESHOLD
}

impl Default for OrderTestSpec {
    fn default() -> Self {
        Self { threshold: default_threshold(), input: None, steps: None, display_base: None }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn partition(&self) -> Result<NodePartition> {
        NodePartition::new(self.nodes.basic, self.nodes.reference)
    }

    /// True node variables, from clocks when present.
    pub fn true_values(&self) -> Result<Vec<f64>> {
        let n = self.partition()?.len();
        let values = match &self.clocks {
            Some(c) => {
                let clocks = self.clock_list(c)?;
                match c.channel {
                    ClockChannel::Skew => clock::skew_variables(&clocks),
                    ClockChannel::Offset => clock::offset_variables(&clocks),
                }
            }
            None => self.nodes.true_values.clone().unwrap_or_else(|| vec![0.0; n]),
        };
        expect_len("true_values", &values, n)?;
        Ok(values)
    }

    pub fn clocks(&self) -> Result<Option<Vec<Clock>>> {
        self.clocks.as_ref().map(|c| self.clock_list(c)).transpose()
    }

    fn clock_list(&self, c: &ClockSpec) -> Result<Vec<Clock>> {
        let n = self.partition()?.len();
        expect_len("clocks.alpha", &c.alpha, n)?;
        expect_len("clocks.beta", &c.beta, n)?;
        c.alpha.iter().zip(&c.beta).map(|(&a, &b)| Clock::new(a, b)).collect()
    }

    pub fn initial_estimates(&self) -> Result<Vec<f64>> {
        let n = self.partition()?.len();
        let init = self.nodes.initial_estimates.clone().unwrap_or_else(|| vec![0.0; n]);
        expect_len("initial_estimates", &init, n)?;
        Ok(init)
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        let n = self.partition()?.len();
        let base = PairNoise::new(self.noise.mean, self.noise.variance);
        let mut model = match &self.clocks {
            Some(c) => {
                let clocks = self.clock_list(c)?;
                match c.channel {
                    ClockChannel::Skew => NoiseModel::uniform(n, base),
                    ClockChannel::Offset => clock::offset_noise(&clocks, base),
                }
            }
            None => NoiseModel::uniform(n, base),
        };
        for p in &self.noise.pairs {
            let (a, b) = (node_index(p.nodes[0], n)?, node_index(p.nodes[1], n)?);
            if a == b {
                return Err(Error::Config(format!("noise pair [{}, {}] repeats a node", p.nodes[0], p.nodes[1])));
            }
            model.set_pair(a, b, PairNoise::new(p.mean, p.variance));
        }
        if self.noise.variance < 0.0 || self.noise.pairs.iter().any(|p| p.variance < 0.0) {
            return Err(Error::Config("noise variance must be nonnegative".into()));
        }
        Ok(model)
    }

    /// Graph chain, early weights, and starting state for `kind = "chain"`.
    pub fn chain(&self) -> Result<Option<(TopologyChain, Option<EarlyWeights>, InitialState)>> {
        let TopologySpec::Chain { transition, states, weights, k0, early_weights, initial_state } = &self.topology else {
            return Ok(None);
        };
        let partition = self.partition()?;
        let n = partition.len();
        let graphs = states
            .iter()
            .map(|edges| {
                let e = edges.iter().map(|&[a, b]| Ok((node_index(a, n)?, node_index(b, n)?))).collect::<Result<Vec<_>>>()?;
                MeasurementGraph::new(partition, e)
            })
            .collect::<Result<Vec<_>>>()?;
        let p = TransitionMatrix::from_row_major(graphs.len(), transition)?;
        let weight_sets = |mats: &Vec<Vec<f64>>, what: &str| -> Result<Vec<WeightAssignment>> {
            if mats.len() != graphs.len() {
                return Err(Error::Dimension(format!("{what}: {} matrices for {} states", mats.len(), graphs.len())));
            }
            graphs
                .iter()
                .zip(mats)
                .map(|(g, m)| {
                    expect_len(what, m, n * n)?;
                    WeightAssignment::from_matrix(g, DMatrix::from_row_slice(n, n, m))
                })
                .collect()
        };
        let w = match weights {
            Some(m) => weight_sets(m, "weights")?,
            None => graphs.iter().map(WeightAssignment::unit).collect(),
        };
        let early = match early_weights {
            Some(m) => Some(EarlyWeights { k0: *k0, per_state: weight_sets(m, "early_weights")? }),
            None if *k0 > 0 => return Err(Error::Config("k0 > 0 requires early_weights".into())),
            None => None,
        };
        let initial = match initial_state {
            None => InitialState::Stationary,
            Some(InitialSpec::Named(s)) if s == "stationary" => InitialState::Stationary,
            Some(InitialSpec::Named(s)) => return Err(Error::Config(format!("unknown initial state {s:?}"))),
            Some(InitialSpec::Index(i)) if *i >= 1 && *i <= graphs.len() => InitialState::Index(i - 1),
            Some(InitialSpec::Index(i)) => return Err(Error::StateIndex { index: *i, states: graphs.len() }),
        };
        Ok(Some((TopologyChain::new(graphs, p, w)?, early, initial)))
    }

    pub fn connectivity(&self) -> Result<Option<ConnectivityRule>> {
        match self.topology {
            TopologySpec::Chain { .. } => Ok(None),
            TopologySpec::Rwp { range, link_fail_prob, .. } | TopologySpec::Sphere { range, link_fail_prob, .. } => {
                ConnectivityRule::new(range, link_fail_prob).map(Some)
            }
        }
    }

    pub fn rwp_params(&self) -> Option<RwpParams> {
        match self.topology {
            TopologySpec::Rwp { width, height, v_min, v_max, pause, dt, .. } => {
                Some(RwpParams { width, height, v_min, v_max, pause, dt })
            }
            _ => None,
        }
    }

    /// Consistency checks that do not need a run.
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if !(self.analysis.window_fraction > 0.0 && self.analysis.window_fraction <= 1.0) {
            return Err(Error::Config("analysis.window_fraction must lie in (0, 1]".into()));
        }
        self.true_values()?;
        self.initial_estimates()?;
        self.noise_model()?;
        self.chain()?;
        self.connectivity()?;
        Ok(())
    }
}

fn expect_len<T>(what: &str, v: &[T], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::Dimension(format!("{what} has {} entries, expected {n}", v.len())));
    }
    Ok(())
}

/// 1-based file id to 0-based index.
pub fn node_index(id: usize, n: usize) -> Result<usize> {
    if id == 0 || id > n {
        return Err(Error::Config(format!("node id {id} outside 1..={n}")));
    }
    Ok(id - 1)
}

/// Parses a graph sequence: one line per step, edges as `a-b` separated by
/// whitespace, 1-based ids, an empty line for an edgeless graph.
pub fn parse_graph_sequence(text: &str, partition: NodePartition) -> Result<Vec<MeasurementGraph>> {
    let n = partition.len();
    text.lines()
        .enumerate()
        .map(|(line_no, line)| {
            let edges = line
                .split_whitespace()
                .map(|tok| {
                    let (a, b) = tok
                        .split_once('-')
                        .ok_or_else(|| Error::Config(format!("line {}: malformed edge {tok:?}", line_no + 1)))?;
                    let parse = |s: &str| {
                        s.parse::<usize>().map_err(|_| Error::Config(format!("line {}: malformed edge {tok:?}", line_no + 1)))
                    };
                    Ok((node_index(parse(a)?, n)?, node_index(parse(b)?, n)?))
                })
                .collect::<Result<Vec<_>>>()?;
            MeasurementGraph::new(partition, edges)
        })
        .collect()
}

pub fn format_graph_line(g: &MeasurementGraph) -> String {
    g.edges().map(|(a, b)| format!("{}-{}", a + 1, b + 1)).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHAIN: &str = r#"
        seed = 7
        steps = 10
        [nodes]
        basic = 2
        reference = 1
        true_values = [0.5, -0.5, 0.0]
        [noise]
        variance = 1e-4
        [[noise.pair]]
        nodes = [2, 1]
        mean = 0.02
        variance = 2e-4
        [topology]
        kind = "chain"
        transition = [0.5, 0.5, 0.5, 0.5]
        states = [[[1, 2]], [[2, 3]]]
        initial_state = 2
    "#;

    #[test]
    fn parses_chain_scenario() {
        let cfg = ScenarioConfig::from_toml(CHAIN).unwrap();
        cfg.validate().unwrap();
        let (chain, early, init) = cfg.chain().unwrap().unwrap();
        assert_eq!(chain.len(), 2);
        assert!(chain.states()[1].has_edge(1, 2));
        assert!(early.is_none());
        assert_eq!(init, InitialState::Index(1));
        let noise = cfg.noise_model().unwrap();
        // eps_{2,1} has mean 0.02, so eps_{1,2} has mean -0.02
        assert_eq!(noise.pair(0, 1), PairNoise::new(-0.02, 2e-4));
        assert_eq!(noise.pair(0, 2), PairNoise::new(0.0, 1e-4));
        assert_eq!(cfg.trials, 1);
    }

    #[test]
    fn rejects_bad_dimensions() {
        let bad = CHAIN.replace("[0.5, -0.5, 0.0]", "[0.5, -0.5]");
        let cfg = ScenarioConfig::from_toml(&bad).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Dimension(_))));

        let bad = CHAIN.replace("[[[1, 2]], [[2, 3]]]", "[[[1, 2]], [[2, 4]]]");
        let cfg = ScenarioConfig::from_toml(&bad).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(ScenarioConfig::from_toml(&CHAIN.replace("seed = 7", "seed = 7\nbogus = 1")).is_err());
    }

    #[test]
    fn graph_sequence_round_trip() {
        let p = NodePartition::new(3, 1).unwrap();
        let text = "1-2 3-4\n\n2-3\n";
        let gs = parse_graph_sequence(text, p).unwrap();
        assert_eq!(gs.len(), 3);
        assert_eq!(gs[1].edge_count(), 0);
        let back: Vec<_> = gs.iter().map(format_graph_line).collect();
        assert_eq!(back.join("\n") + "\n", text);
        assert!(parse_graph_sequence("1-9\n", p).is_err());
        assert!(parse_graph_sequence("12\n", p).is_err());
    }
}
