//! Command-line front end. Every subcommand reads one scenario file and
//! writes its results under the output directory.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{format_graph_line, parse_graph_sequence, ScenarioConfig};
use crate::error::{Error, Result};
use crate::graph::{MeasurementGraph, NodePartition};
use crate::mobility::{graph_from_positions, ConnectivityRule, MobilityModel, RandomWaypoint, SphereWalk};
use crate::montecarlo::{compare, run_montecarlo, trial_rng, write_json, write_trace_csv, Scenario, Topology};
use crate::order::{test_graph_process, Order};

pub const EXIT_OK: i32 = 0;
/// Unknown subcommand or bad flags.
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_DIMENSION: i32 = 4;
pub const EXIT_FAILURE: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "relsync", version, about = "Estimation from relative measurements over switching topologies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output.dir` from the scenario, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convergence certificate and limiting moments.
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// One trial; writes the estimate and error trace.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Many trials; writes per-iteration statistics and the comparison summary.
    Montecarlo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
        /// Worker threads, 0 for all cores.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Node positions and the induced graph sequence.
    Mobility {
        #[command(flatten)]
        common: Common,
    },
    /// Entropy profile and Markov order verdict of a graph sequence.
    OrderTest {
        #[command(flatten)]
        common: Common,
    },
    /// Structural checks on the lifted operators.
    Properties {
        #[command(flatten)]
        common: Common,
    },
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Dimension(_) | Error::PartitionMismatch | Error::StateIndex { .. } => EXIT_DIMENSION,
        _ => EXIT_FAILURE,
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

struct Ctx {
    cfg: ScenarioConfig,
    config_dir: PathBuf,
    out: PathBuf,
    seed: u64,
}

fn load(common: &Common) -> Result<Ctx> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", common.config.display())))?;
    let cfg = ScenarioConfig::from_toml(&text)?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)?;
    let config_dir = common.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let seed = common.seed.unwrap_or(cfg.seed);
    Ok(Ctx { cfg, config_dir, out, seed })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Analyze { common } => analyze(&load(&common)?),
        Command::Simulate { common } => simulate(&load(&common)?),
        Command::Montecarlo { common, trials, workers } => {
            let mut ctx = load(&common)?;
            if let Some(t) = trials {
                ctx.cfg.trials = t;
            }
            if let Some(w) = workers {
                ctx.cfg.workers = w;
            }
            montecarlo(&ctx)
        }
        Command::Mobility { common } => mobility(&load(&common)?),
        Command::OrderTest { common } => order_test(&load(&common)?),
        Command::Properties { common } => properties(&load(&common)?),
    }
}

#[derive(Serialize)]
struct AnalyzeSummary<'a> {
    name: &'a str,
    validation: crate::topology::ValidationReport,
    stationary: Vec<f64>,
    #[serde(rename = "rho_Db")]
    rho_db: f64,
    union_connected: bool,
    references_reach_all: bool,
    ms_convergent: bool,
    hypotheses_hold: bool,
    mu: Option<Vec<f64>>,
    q_diag: Option<Vec<f64>>,
    var_limit: Option<Vec<f64>>,
}

fn analyze(ctx: &Ctx) -> Result<()> {
    let scenario = Scenario::from_config(&ctx.cfg)?;
    let a = scenario
        .analyze()?
        .ok_or_else(|| Error::Config("analyze needs a chain topology".into()))?;
    let steady = a.steady.as_ref();
    let summary = AnalyzeSummary {
        name: &scenario.name,
        validation: a.validation,
        stationary: a.system.pi.to_vec(),
        rho_db: a.certificate.rho_db,
        union_connected: a.certificate.union_connected,
        references_reach_all: a.certificate.references_reach_all,
        ms_convergent: a.certificate.ms_convergent,
        hypotheses_hold: a.certificate.hypotheses_hold,
        mu: steady.map(|s| s.mu.iter().copied().collect()),
        q_diag: steady.map(|s| s.q_big.diagonal().iter().copied().collect()),
        var_limit: steady.map(|s| s.variance().iter().copied().collect()),
    };
    write_json(&ctx.out.join("summary.json"), &summary)?;
    if ctx.cfg.analysis.dump_matrices {
        for (name, m) in [("D_b.csv", &a.lifted.d_b), ("C_b.csv", &a.lifted.c_b)] {
            let mut w = create(&ctx.out, name)?;
            for row in m.row_iter() {
                writeln!(w, "{}", row.iter().map(f64::to_string).collect::<Vec<_>>().join(","))?;
            }
            w.flush()?;
        }
    }
    println!("rho(D_b) = {}  ms_convergent = {}", summary.rho_db, summary.ms_convergent);
    Ok(())
}

fn simulate(ctx: &Ctx) -> Result<()> {
    let scenario = Scenario::from_config(&ctx.cfg)?;
    let trace = scenario.trace(ctx.seed, 0)?;
    let mut w = create(&ctx.out, "trace.csv")?;
    write_trace_csv(&mut w, &trace, &scenario.x_true)?;
    w.flush()?;
    if !trace.modes.is_empty() {
        let mut w = create(&ctx.out, "modes.csv")?;
        writeln!(w, "k,mode")?;
        for (k, m) in trace.modes.iter().enumerate() {
            writeln!(w, "{k},{}", m + 1)?;
        }
        w.flush()?;
    }
    println!("wrote {} iterations to {}", trace.estimates.len(), ctx.out.display());
    Ok(())
}

fn montecarlo(ctx: &Ctx) -> Result<()> {
    ctx.cfg.validate()?;
    let scenario = Scenario::from_config(&ctx.cfg)?;
    let analysis = scenario.analyze()?;
    let stats = run_montecarlo(&scenario, ctx.seed, ctx.cfg.trials, ctx.cfg.workers)?;
    let mut w = create(&ctx.out, "stats.csv")?;
    stats.write_csv(&mut w)?;
    w.flush()?;
    let report = compare(&scenario, analysis.as_ref(), &stats, ctx.seed);
    write_json(&ctx.out.join("summary.json"), &report)?;
    println!("{} trials, window {:?}", report.trials, report.window);
    if let Some(d) = &report.rel_dev {
        println!("variance rel_dev max = {}", d.iter().fold(0.0f64, |a, &x| a.max(x)));
    }
    Ok(())
}

fn mobility_steps(ctx: &Ctx) -> usize {
    ctx.cfg.order_test.steps.unwrap_or(ctx.cfg.steps)
}

/// Steps a mobility model, recording coordinates and graphs.
fn track<M: MobilityModel>(
    mut model: M,
    rule: &ConnectivityRule,
    partition: NodePartition,
    steps: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
    mut positions: Option<&mut dyn Write>,
) -> Result<Vec<MeasurementGraph>> {
    let mut graphs = Vec::with_capacity(steps);
    for k in 0..steps {
        if k > 0 {
            model.step(rng);
        }
        if let Some(w) = positions.as_mut() {
            for u in 0..model.node_count() {
                let c = model.coordinates(u).iter().map(f64::to_string).collect::<Vec<_>>().join(",");
                writeln!(w, "{k},{},{c}", u + 1)?;
            }
        }
        graphs.push(graph_from_positions(&model, rule, partition, rng)?);
    }
    Ok(graphs)
}

fn mobility_graphs(ctx: &Ctx, scenario: &Scenario, positions: Option<&mut dyn Write>) -> Result<Vec<MeasurementGraph>> {
    let steps = mobility_steps(ctx);
    let mut rng = trial_rng(ctx.seed, 0);
    let n = scenario.partition.len();
    match &scenario.topology {
        Topology::Rwp { params, rule } => {
            let model = RandomWaypoint::random(n, *params, &mut rng)?;
            track(model, rule, scenario.partition, steps, &mut rng, positions)
        }
        Topology::Sphere { sigma, rule } => {
            let model = SphereWalk::random(n, *sigma, &mut rng)?;
            track(model, rule, scenario.partition, steps, &mut rng, positions)
        }
        Topology::Chain { chain, initial, .. } => {
            let path = chain.sample_path(steps, *initial, &mut rng)?;
            Ok(path.into_iter().map(|i| chain.states()[i].clone()).collect())
        }
    }
}

fn mobility(ctx: &Ctx) -> Result<()> {
    let scenario = Scenario::from_config(&ctx.cfg)?;
    if scenario.chain().is_some() {
        return Err(Error::Config("mobility needs an rwp or sphere topology".into()));
    }
    let mut pos = create(&ctx.out, "positions.csv")?;
    let header = if matches!(scenario.topology, Topology::Rwp { .. }) { "k,node,x,y" } else { "k,node,x,y,z" };
    writeln!(pos, "{header}")?;
    let graphs = mobility_graphs(ctx, &scenario, Some(&mut pos))?;
    pos.flush()?;
    write_graphs(&ctx.out.join("graphs.txt"), &graphs)?;
    println!("wrote {} steps to {}", graphs.len(), ctx.out.display());
    Ok(())
}

fn write_graphs(path: &Path, graphs: &[MeasurementGraph]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for g in graphs {
        writeln!(w, "{}", format_graph_line(g))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct OrderSummary {
    observations: usize,
    distinct_graphs: usize,
    profile: [f64; 4],
    drops: [f64; 2],
    threshold: f64,
    order: Order,
}

fn order_test(ctx: &Ctx) -> Result<()> {
    let spec = &ctx.cfg.order_test;
    let partition = ctx.cfg.partition()?;
    let graphs = match &spec.input {
        Some(p) => {
            let path = ctx.config_dir.join(p);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            parse_graph_sequence(&text, partition)?
        }
        None => mobility_graphs(ctx, &Scenario::from_config(&ctx.cfg)?, None)?,
    };
    let (profile, verdict) = test_graph_process(&graphs, spec.threshold)?;
    let shown = match spec.display_base {
        Some(b) => profile.in_base(b),
        None => profile.values(),
    };
    let mut w = create(&ctx.out, "profile.csv")?;
    writeln!(w, "i,H")?;
    for (i, h) in shown.iter().enumerate() {
        writeln!(w, "{i},{h}")?;
    }
    w.flush()?;
    let summary = OrderSummary {
        observations: graphs.len(),
        distinct_graphs: profile.n_states,
        profile: shown,
        drops: verdict.drops,
        threshold: verdict.threshold,
        order: verdict.order,
    };
    write_json(&ctx.out.join("summary.json"), &summary)?;
    for (i, h) in shown.iter().enumerate() {
        println!("H{i} = {h}");
    }
    println!("order: {}", verdict.order);
    Ok(())
}

fn properties(ctx: &Ctx) -> Result<()> {
    let scenario = Scenario::from_config(&ctx.cfg)?;
    let report = scenario
        .properties()?
        .ok_or_else(|| Error::Config("properties needs a chain topology".into()))?;
    write_json(&ctx.out.join("properties.json"), &report)?;
    println!("all properties hold: {}", report.all_hold());
    Ok(())
}
