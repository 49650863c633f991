//! Seeded Monte Carlo runs and comparison with the analytic limits.
//!
//! Trial `t` draws from its own ChaCha8 stream: the generator is seeded from
//! the master seed and switched to stream `t + 1`. Trials run in parallel,
//! but their statistics are merged in trial order, so the output does not
//! depend on the number of workers.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{AnalysisSpec, ScenarioConfig, TopologySpec};
use crate::error::{Error, Result};
use crate::estimator::{simulate, ChainSource, EarlyWeights, EstimatorState, NoiseModel, TraceRecord};
use crate::graph::NodePartition;
use crate::mjls::{
    build_lifted, ms_convergence, steady_state, verify_structural_properties, ConvergenceCertificate, JumpSystem,
    LiftedOperators, PropertyReport, SteadyState,
};
use crate::mobility::{ConnectivityRule, MobilitySource, RandomWaypoint, RwpParams, SphereWalk};
use crate::topology::{InitialState, TopologyChain, ValidationReport};

/// Generator for trial `trial` under `seed`.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64 + 1);
    rng
}

#[derive(Debug, Clone)]
pub enum Topology {
    Chain { chain: TopologyChain, early: Option<EarlyWeights>, initial: InitialState },
    Rwp { params: RwpParams, rule: ConnectivityRule },
    Sphere { sigma: f64, rule: ConnectivityRule },
}

/// A fully resolved scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub partition: NodePartition,
    pub x_true: Vec<f64>,
    pub init: Vec<f64>,
    pub noise: NoiseModel,
    pub topology: Topology,
    pub steps: usize,
    pub analysis: AnalysisSpec,
}

/// Results of the analytic side of a chain scenario.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub validation: ValidationReport,
    pub system: JumpSystem,
    pub lifted: LiftedOperators,
    pub certificate: ConvergenceCertificate,
    /// Present when the chain is mean-square convergent.
    pub steady: Option<SteadyState>,
}

impl Scenario {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let partition = cfg.partition()?;
        let topology = match &cfg.topology {
            TopologySpec::Chain { .. } => {
                let (chain, early, initial) = cfg.chain()?.expect("chain topology");
                Topology::Chain { chain, early, initial }
            }
            TopologySpec::Rwp { .. } => Topology::Rwp {
                params: cfg.rwp_params().expect("rwp topology"),
                rule: cfg.connectivity()?.expect("mobility rule"),
            },
            TopologySpec::Sphere { sigma, .. } => {
                Topology::Sphere { sigma: *sigma, rule: cfg.connectivity()?.expect("mobility rule") }
            }
        };
        Ok(Self {
            name: cfg.name.clone(),
            partition,
            x_true: cfg.true_values()?,
            init: cfg.initial_estimates()?,
            noise: cfg.noise_model()?,
            topology,
            steps: cfg.steps,
            analysis: cfg.analysis.clone(),
        })
    }

    pub fn chain(&self) -> Option<&TopologyChain> {
        match &self.topology {
            Topology::Chain { chain, .. } => Some(chain),
            _ => None,
        }
    }

    /// Convergence certificate and, when convergent, the limiting moments.
    /// `None` for mobility scenarios, which have no finite chain.
    pub fn analyze(&self) -> Result<Option<Analysis>> {
        let Some(chain) = self.chain() else { return Ok(None) };
        let system = JumpSystem::from_chain(chain, &self.noise)?;
        let lifted = build_lifted(&system, self.analysis.size_cap)?;
        let certificate = ms_convergence(&system, &lifted)?;
        let steady = if certificate.ms_convergent { Some(steady_state(&system, &lifted)?) } else { None };
        Ok(Some(Analysis { validation: chain.validate(), system, lifted, certificate, steady }))
    }

    pub fn properties(&self) -> Result<Option<PropertyReport>> {
        let Some(chain) = self.chain() else { return Ok(None) };
        let system = JumpSystem::from_chain(chain, &self.noise)?;
        verify_structural_properties(&system, self.analysis.size_cap).map(Some)
    }

    /// Runs one trial and hands every state, `k = 0..=steps`, to `observe`.
    pub fn run_trial<F>(&self, seed: u64, trial: usize, observe: F) -> Result<()>
    where
        F: FnMut(&EstimatorState, Option<usize>),
    {
        let mut rng = trial_rng(seed, trial);
        let (x, init, steps) = (&self.x_true, &self.init, self.steps);
        match &self.topology {
            Topology::Chain { chain, early, initial } => {
                let mut source = ChainSource::new(chain, *initial);
                if let Some(e) = early {
                    source = source.with_early_weights(e);
                }
                simulate(&mut source, &self.noise, x, init, steps, &mut rng, observe)
            }
            Topology::Rwp { params, rule } => {
                let model = RandomWaypoint::random(self.partition.len(), *params, &mut rng)?;
                let mut source = MobilitySource::new(model, *rule, self.partition)?;
                simulate(&mut source, &self.noise, x, init, steps, &mut rng, observe)
            }
            Topology::Sphere { sigma, rule } => {
                let model = SphereWalk::random(self.partition.len(), *sigma, &mut rng)?;
                let mut source = MobilitySource::new(model, *rule, self.partition)?;
                simulate(&mut source, &self.noise, x, init, steps, &mut rng, observe)
            }
        }
    }

    /// Full trace of one trial.
    pub fn trace(&self, seed: u64, trial: usize) -> Result<TraceRecord> {
        let p = self.partition;
        let mut trace = TraceRecord { estimates: Vec::new(), errors: Vec::new(), modes: Vec::new() };
        if self.steps == 0 {
            let s = EstimatorState::new(p, &self.init, &self.x_true)?;
            trace.errors.push(s.errors(p, &self.x_true));
            trace.estimates.push(s.x_hat);
            return Ok(trace);
        }
        self.run_trial(seed, trial, |s, mode| {
            trace.estimates.push(s.x_hat.clone());
            trace.errors.push(s.errors(p, &self.x_true));
            if let (Some(m), true) = (mode, s.k > 0) {
                trace.modes.push(m);
            }
        })?;
        Ok(trace)
    }

    /// Basic-node errors of one trial, flattened as `[k * n_basic + u]`.
    fn error_trace(&self, seed: u64, trial: usize) -> Result<Vec<f64>> {
        if self.steps == 0 {
            return Err(Error::Parameter("Monte Carlo runs need at least one step".into()));
        }
        let nb = self.partition.n_basic();
        let mut out = Vec::with_capacity((self.steps + 1) * nb);
        self.run_trial(seed, trial, |s, _| out.extend(s.x_hat[..nb].iter().zip(&self.x_true).map(|(a, b)| a - b)))?;
        Ok(out)
    }
}

/// Per-iteration, per-node error statistics across trials.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloStats {
    pub trials: usize,
    pub steps: usize,
    pub n_basic: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
    /// Largest `|e_u(k)|` seen in any trial.
    pub max_abs_error: f64,
    /// Largest `|e_u(0)|` seen in any trial.
    pub max_abs_initial_error: f64,
}

impl MonteCarloStats {
    fn new(steps: usize, n_basic: usize) -> Self {
        let len = (steps + 1) * n_basic;
        Self {
            trials: 0,
            steps,
            n_basic,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
            max_abs_error: 0.0,
            max_abs_initial_error: 0.0,
        }
    }

    fn push(&mut self, errors: &[f64]) {
        self.trials += 1;
        let n = self.trials as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(errors) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
        let nb = self.n_basic;
        let abs_max = |s: &[f64]| s.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        self.max_abs_error = self.max_abs_error.max(abs_max(errors));
        self.max_abs_initial_error = self.max_abs_initial_error.max(abs_max(&errors[..nb]));
    }

    pub fn mean(&self, k: usize, u: usize) -> f64 {
        self.mean[k * self.n_basic + u]
    }

    /// Whether variances are defined, which needs two trials.
    pub fn has_variance(&self) -> bool {
        self.trials >= 2
    }

    /// Unbiased sample variance; zero for a single trial.
    pub fn variance(&self, k: usize, u: usize) -> f64 {
        if self.trials < 2 {
            return 0.0;
        }
        self.m2[k * self.n_basic + u] / (self.trials - 1) as f64
    }

    /// Standard error of the mean.
    pub fn standard_error(&self, k: usize, u: usize) -> f64 {
        (self.variance(k, u) / self.trials as f64).sqrt()
    }

    /// Iterations in the final window of the given fraction of the run.
    pub fn window(&self, fraction: f64) -> std::ops::RangeInclusive<usize> {
        let w = ((fraction * self.steps as f64).ceil() as usize).clamp(1, self.steps.max(1));
        self.steps + 1 - w..=self.steps
    }

    /// Per-node variance averaged over `window`.
    pub fn window_variance(&self, window: std::ops::RangeInclusive<usize>) -> Vec<f64> {
        let len = window.clone().count() as f64;
        (0..self.n_basic).map(|u| window.clone().map(|k| self.variance(k, u)).sum::<f64>() / len).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "k,node,mean,variance,se")?;
        for k in 0..=self.steps {
            for u in 0..self.n_basic {
                if self.has_variance() {
                    writeln!(out, "{k},{},{},{},{}", u + 1, self.mean(k, u), self.variance(k, u), self.standard_error(k, u))?;
                } else {
                    writeln!(out, "{k},{},{},,", u + 1, self.mean(k, u))?;
                }
            }
        }
        Ok(())
    }
}

/// Runs `trials` independent trials on `workers` threads (0 = all cores).
pub fn run_montecarlo(scenario: &Scenario, seed: u64, trials: usize, workers: usize) -> Result<MonteCarloStats> {
    if trials == 0 {
        return Err(Error::Parameter("at least one trial is required".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Parameter(format!("cannot start worker pool: {e}")))?;
    let chunk = 4 * pool.current_num_threads().max(1);
    let mut stats = MonteCarloStats::new(scenario.steps, scenario.partition.n_basic());
    let mut start = 0;
    while start < trials {
        let end = (start + chunk).min(trials);
        let traces: Vec<Vec<f64>> =
            pool.install(|| (start..end).into_par_iter().map(|t| scenario.error_trace(seed, t)).collect::<Result<_>>())?;
        for t in &traces {
            stats.push(t);
        }
        start = end;
    }
    Ok(stats)
}

/// Summary of a Monte Carlo run against the analytic limits.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub name: String,
    pub seed: u64,
    pub trials: usize,
    pub steps: usize,
    #[serde(rename = "rho_Db")]
    pub rho_db: Option<f64>,
    pub union_connected: Option<bool>,
    pub references_reach_all: Option<bool>,
    pub ms_convergent: Option<bool>,
    pub mu: Option<Vec<f64>>,
    pub q_diag: Option<Vec<f64>>,
    pub var_limit: Option<Vec<f64>>,
    /// Per-node variance averaged over the comparison window; absent for a
    /// single trial.
    pub empirical_var_final: Option<Vec<f64>>,
    pub empirical_mean_final: Vec<f64>,
    pub mean_se_final: Option<Vec<f64>>,
    pub rel_dev: Option<Vec<f64>>,
    /// First and last iteration of the comparison window.
    pub window: [usize; 2],
    pub variance_within_tolerance: Option<bool>,
    pub mean_within_se: Option<bool>,
    pub max_abs_error: f64,
    pub max_abs_initial_error: f64,
}

pub fn compare(scenario: &Scenario, analysis: Option<&Analysis>, stats: &MonteCarloStats, seed: u64) -> ComparisonReport {
    let spec = &scenario.analysis;
    let window = stats.window(spec.window_fraction);
    let nb = stats.n_basic;
    let last = stats.steps;
    let defined = stats.has_variance();
    let empirical_var_final = defined.then(|| stats.window_variance(window.clone()));
    let empirical_mean_final: Vec<f64> = (0..nb).map(|u| stats.mean(last, u)).collect();
    let mean_se_final = defined.then(|| (0..nb).map(|u| stats.standard_error(last, u)).collect::<Vec<_>>());
    let cert = analysis.map(|a| a.certificate);
    let steady = analysis.and_then(|a| a.steady.as_ref());
    let mu = steady.map(|s| s.mu.iter().copied().collect::<Vec<_>>());
    let var_limit = steady.map(|s| s.variance().iter().copied().collect::<Vec<_>>());
    let rel_dev = var_limit.as_ref().zip(empirical_var_final.as_ref()).map(|(lim, emp)| {
        lim.iter()
            .zip(emp)
            .map(|(&l, &e)| if l == 0.0 { if e == 0.0 { 0.0 } else { f64::INFINITY } } else { (e - l).abs() / l })
            .collect::<Vec<_>>()
    });
    let variance_within_tolerance = rel_dev.as_ref().map(|d| d.iter().all(|&x| x <= spec.variance_rel_tol));
    let mean_within_se = mu.as_ref().zip(mean_se_final.as_ref()).map(|(mu, se)| {
        mu.iter()
            .zip(&empirical_mean_final)
            .zip(se)
            .all(|((&m, &e), &se)| (e - m).abs() <= spec.mean_se_factor * se)
    });
    ComparisonReport {
        name: scenario.name.clone(),
        seed,
        trials: stats.trials,
        steps: stats.steps,
        rho_db: cert.map(|c| c.rho_db),
        union_connected: cert.map(|c| c.union_connected),
        references_reach_all: cert.map(|c| c.references_reach_all),
        ms_convergent: cert.map(|c| c.ms_convergent),
        mu,
        q_diag: steady.map(|s| s.q_big.diagonal().iter().copied().collect()),
        var_limit,
        empirical_var_final,
        empirical_mean_final,
        mean_se_final,
        rel_dev,
        window: [*window.start(), *window.end()],
        variance_within_tolerance,
        mean_within_se,
        max_abs_error: stats.max_abs_error,
        max_abs_initial_error: stats.max_abs_initial_error,
    }
}

/// Long-format trace: one row per iteration and node, 1-based node ids.
/// Reference nodes report zero error.
pub fn write_trace_csv<W: Write>(mut out: W, trace: &TraceRecord, x_true: &[f64]) -> Result<()> {
    writeln!(out, "k,node,estimate,error")?;
    for (k, (est, err)) in trace.estimates.iter().zip(&trace.errors).enumerate() {
        for (u, x) in est.iter().enumerate() {
            let e = err.get(u).copied().unwrap_or(0.0);
            debug_assert!(u >= err.len() || (x - x_true[u] - e).abs() <= 1e-12 * (1.0 + x.abs()));
            writeln!(out, "{k},{},{x},{e}", u + 1)?;
        }
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parameter(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(extra_noise: &str) -> Scenario {
        let text = format!(
            r#"
            seed = 1
            steps = 60
            [nodes]
            basic = 2
            reference = 1
            true_values = [1.0, -1.0, 0.0]
            initial_estimates = [0.0, 0.0, 0.0]
            [noise]
            variance = 1e-3
            {extra_noise}
            [topology]
            kind = "chain"
            transition = [0.5, 0.5, 0.5, 0.5]
            states = [[[1, 2], [2, 3]], [[1, 3]]]
            "#
        );
        Scenario::from_config(&ScenarioConfig::from_toml(&text).unwrap()).unwrap()
    }

    #[test]
    fn streams_differ_per_trial() {
        use rand::Rng;
        let a: u64 = trial_rng(9, 0).random();
        let b: u64 = trial_rng(9, 1).random();
        assert_ne!(a, b);
        assert_eq!(a, trial_rng(9, 0).random::<u64>());
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let s = scenario("");
        let one = run_montecarlo(&s, 3, 37, 1).unwrap();
        let four = run_montecarlo(&s, 3, 37, 4).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn welford_matches_two_pass() {
        let s = scenario("");
        let stats = run_montecarlo(&s, 5, 20, 2).unwrap();
        let traces: Vec<_> = (0..20).map(|t| s.trace(5, t).unwrap()).collect();
        for k in [0, 1, 30, 60] {
            for u in 0..2 {
                let xs: Vec<f64> = traces.iter().map(|t| t.errors[k][u]).collect();
                let m = xs.iter().sum::<f64>() / 20.0;
                let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 19.0;
                assert!((stats.mean(k, u) - m).abs() < 1e-12);
                assert!((stats.variance(k, u) - v).abs() < 1e-12 * (1.0 + v));
            }
        }
    }

    #[test]
    fn report_compares_against_limits() {
        let s = scenario("");
        let analysis = s.analyze().unwrap().unwrap();
        assert!(analysis.certificate.ms_convergent);
        let stats = run_montecarlo(&s, 11, 400, 0).unwrap();
        let r = compare(&s, Some(&analysis), &stats, 11);
        assert_eq!(r.window, [55, 60]);
        assert!(r.mean_within_se.unwrap());
        assert!(r.rel_dev.as_ref().unwrap().iter().all(|d| *d < 0.25), "{:?}", r.rel_dev);
        let json = serde_json::to_value(&r).unwrap();
        for key in ["rho_Db", "union_connected", "ms_convergent", "mu", "q_diag", "var_limit", "empirical_var_final", "rel_dev"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn single_trial_omits_variance() {
        let s = scenario("");
        let analysis = s.analyze().unwrap();
        let stats = run_montecarlo(&s, 4, 1, 1).unwrap();
        let trace = s.trace(4, 0).unwrap();
        for k in [0, 10, 60] {
            for u in 0..2 {
                assert_eq!(stats.mean(k, u), trace.errors[k][u]);
            }
        }
        let r = compare(&s, analysis.as_ref(), &stats, 4);
        assert!(r.empirical_var_final.is_none() && r.rel_dev.is_none() && r.mean_within_se.is_none());
        let mut buf = Vec::new();
        stats.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().lines().nth(1).unwrap().ends_with(",,"));
    }

    #[test]
    fn trace_csv_layout() {
        let s = scenario("");
        let t = s.trace(1, 0).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &t, &s.x_true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("k,node,estimate,error"));
        assert_eq!(lines.next(), Some("0,1,0,-1"));
        assert_eq!(text.lines().count(), 1 + 61 * 3);
    }

    #[test]
    fn mobility_scenario_runs() {
        let text = r#"
            seed = 1
            steps = 50
            [nodes]
            basic = 4
            reference = 1
            [noise]
            variance = 1e-4
            [topology]
            kind = "rwp"
            width = 20.0
            height = 20.0
            v_min = 1.0
            v_max = 3.0
            pause = 1.0
            range = 10.0
        "#;
        let s = Scenario::from_config(&ScenarioConfig::from_toml(text).unwrap()).unwrap();
        assert!(s.analyze().unwrap().is_none());
        let stats = run_montecarlo(&s, 2, 8, 2).unwrap();
        assert_eq!(stats.trials, 8);
        assert!(stats.max_abs_error.is_finite());
    }
}
