//! C ABI over the relsync engine.
//!
//! Every function returns a [`RelsyncStatus`]. On failure the message is kept
//! per thread and can be read with [`relsync_last_error`]. Handles are opaque
//! and must be released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use relsync::config::ScenarioConfig;
use relsync::montecarlo::{run_montecarlo, MonteCarloStats, Scenario};
use relsync::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelsyncStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Dimension = 4,
    InvalidModel = 5,
    NotConvergent = 6,
    Numerical = 7,
    NotAChain = 8,
    BufferTooSmall = 9,
    OutOfRange = 10,
    Io = 11,
    Panic = 12,
}

/// A loaded scenario.
pub struct RelsyncScenario {
    scenario: Scenario,
    seed: u64,
}

/// Per-iteration error statistics from a Monte Carlo run.
pub struct RelsyncStats {
    stats: MonteCarloStats,
}

/// Outcome of the mean-square convergence test.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RelsyncCertificate {
    /// Spectral radius of the second-moment operator.
    pub rho: f64,
    pub union_connected: bool,
    pub references_reach_all: bool,
    pub ms_convergent: bool,
    pub hypotheses_hold: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(RelsyncStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) => RelsyncStatus::Config,
            Error::Dimension(_) | Error::PartitionMismatch | Error::StateIndex { .. } => RelsyncStatus::Dimension,
            Error::NotConvergent { .. } => RelsyncStatus::NotConvergent,
            Error::NoConvergence { .. } | Error::Singular { .. } | Error::CriteriaDisagree { .. } | Error::SizeCap { .. } => {
                RelsyncStatus::Numerical
            }
            Error::Io(_) => RelsyncStatus::Io,
            _ => RelsyncStatus::InvalidModel,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RelsyncStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RelsyncStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RelsyncStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(RelsyncStatus::NullPointer, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(RelsyncStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn buffer<'a>(p: *mut f64, len: usize, need: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    if len < need {
        return Err(Failure(RelsyncStatus::BufferTooSmall, format!("{what} holds {len} values, {need} needed")));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

fn publish<T>(out: &mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

fn open(cfg: ScenarioConfig) -> Result<RelsyncScenario, Failure> {
    let seed = cfg.seed;
    Ok(RelsyncScenario { scenario: Scenario::from_config(&cfg)?, seed })
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn relsync_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses a scenario from TOML text. Relative paths inside it resolve against
/// the working directory.
///
/// # Safety
/// `toml` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn relsync_scenario_from_toml(toml: *const c_char, out: *mut *mut RelsyncScenario) -> RelsyncStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let handle = open(ScenarioConfig::from_toml(text(toml, "toml")?)?)?;
        publish(out, handle);
        Ok(())
    })
}

/// Loads a scenario file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn relsync_scenario_load(path: *const c_char, out: *mut *mut RelsyncScenario) -> RelsyncStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let handle = open(ScenarioConfig::load(Path::new(text(path, "path")?))?)?;
        publish(out, handle);
        Ok(())
    })
}

/// # Safety
/// `scenario` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn relsync_scenario_free(scenario: *mut RelsyncScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Node counts and run length of a scenario. Any output pointer may be null.
///
/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn relsync_scenario_shape(
    scenario: *const RelsyncScenario,
    n_basic: *mut usize,
    n_reference: *mut usize,
    steps: *mut usize,
) -> RelsyncStatus {
    guard(|| {
        let s = &borrow(scenario, "scenario")?.scenario;
        if let Some(p) = n_basic.as_mut() {
            *p = s.partition.n_basic();
        }
        if let Some(p) = n_reference.as_mut() {
            *p = s.partition.n_reference();
        }
        if let Some(p) = steps.as_mut() {
            *p = s.steps;
        }
        Ok(())
    })
}

/// Seed given in the scenario.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn relsync_scenario_seed(scenario: *const RelsyncScenario, out: *mut u64) -> RelsyncStatus {
    guard(|| {
        *out_ref(out, "out")? = borrow(scenario, "scenario")?.seed;
        Ok(())
    })
}

/// Runs the convergence test on a chain scenario.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn relsync_analyze(scenario: *const RelsyncScenario, out: *mut RelsyncCertificate) -> RelsyncStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let a = analysis(borrow(scenario, "scenario")?)?;
        let c = a.certificate;
        *out = RelsyncCertificate {
            rho: c.rho_db,
            union_connected: c.union_connected,
            references_reach_all: c.references_reach_all,
            ms_convergent: c.ms_convergent,
            hypotheses_hold: c.hypotheses_hold,
        };
        Ok(())
    })
}

fn analysis(h: &RelsyncScenario) -> Result<relsync::montecarlo::Analysis, Failure> {
    h.scenario
        .analyze()?
        .ok_or_else(|| Failure(RelsyncStatus::NotAChain, "mobility scenarios have no finite chain to analyze".into()))
}

/// Limiting mean and variance of the basic-node errors. Either buffer may be
/// null; a non-null buffer needs room for `n_basic` values.
///
/// # Safety
/// `scenario` must be a live handle and each non-null buffer must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn relsync_steady_state(
    scenario: *const RelsyncScenario,
    mean: *mut f64,
    variance: *mut f64,
    len: usize,
) -> RelsyncStatus {
    guard(|| {
        let a = analysis(borrow(scenario, "scenario")?)?;
        let Some(steady) = a.steady else {
            return Err(Error::NotConvergent { rho: a.certificate.rho_db }.into());
        };
        let n = steady.mu.len();
        if !mean.is_null() {
            buffer(mean, len, n, "mean")?.copy_from_slice(steady.mu.as_slice());
        }
        if !variance.is_null() {
            buffer(variance, len, n, "variance")?.copy_from_slice(steady.variance().as_slice());
        }
        Ok(())
    })
}

/// Runs one trial and writes the full estimate vector at every iteration,
/// row `k` at offset `k * (n_basic + n_reference)`, `k = 0..=steps`.
///
/// # Safety
/// `scenario` must be a live handle and `estimates` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn relsync_simulate(
    scenario: *const RelsyncScenario,
    seed: u64,
    trial: usize,
    estimates: *mut f64,
    len: usize,
) -> RelsyncStatus {
    guard(|| {
        let s = &borrow(scenario, "scenario")?.scenario;
        let n = s.partition.len();
        let dst = buffer(estimates, len, (s.steps + 1) * n, "estimates")?;
        let trace = s.trace(seed, trial)?;
        for (row, x) in dst.chunks_exact_mut(n).zip(&trace.estimates) {
            row.copy_from_slice(x);
        }
        Ok(())
    })
}

/// Runs `trials` trials on `workers` threads (0 uses every core).
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn relsync_montecarlo(
    scenario: *const RelsyncScenario,
    seed: u64,
    trials: usize,
    workers: usize,
    out: *mut *mut RelsyncStats,
) -> RelsyncStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let stats = run_montecarlo(&borrow(scenario, "scenario")?.scenario, seed, trials, workers)?;
        publish(out, RelsyncStats { stats });
        Ok(())
    })
}

/// # Safety
/// `stats` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn relsync_stats_free(stats: *mut RelsyncStats) {
    if !stats.is_null() {
        drop(Box::from_raw(stats));
    }
}

/// Trial count, run length and basic node count. Any output pointer may be null.
///
/// # Safety
/// `stats` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn relsync_stats_shape(
    stats: *const RelsyncStats,
    trials: *mut usize,
    steps: *mut usize,
    n_basic: *mut usize,
) -> RelsyncStatus {
    guard(|| {
        let s = &borrow(stats, "stats")?.stats;
        if let Some(p) = trials.as_mut() {
            *p = s.trials;
        }
        if let Some(p) = steps.as_mut() {
            *p = s.steps;
        }
        if let Some(p) = n_basic.as_mut() {
            *p = s.n_basic;
        }
        Ok(())
    })
}

/// Sample mean and unbiased variance of the basic-node errors at iteration
/// `k`. Either buffer may be null. Variances need at least two trials.
///
/// # Safety
/// `stats` must be a live handle and each non-null buffer must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn relsync_stats_at(
    stats: *const RelsyncStats,
    k: usize,
    mean: *mut f64,
    variance: *mut f64,
    len: usize,
) -> RelsyncStatus {
    guard(|| {
        let s = &borrow(stats, "stats")?.stats;
        if k > s.steps {
            return Err(Failure(RelsyncStatus::OutOfRange, format!("iteration {k} beyond {} steps", s.steps)));
        }
        let n = s.n_basic;
        if !mean.is_null() {
            for (u, m) in buffer(mean, len, n, "mean")?.iter_mut().enumerate() {
                *m = s.mean(k, u);
            }
        }
        if !variance.is_null() {
            if !s.has_variance() {
                return Err(Failure(RelsyncStatus::OutOfRange, "variance needs at least two trials".into()));
            }
            for (u, v) in buffer(variance, len, n, "variance")?.iter_mut().enumerate() {
                *v = s.variance(k, u);
            }
        }
        Ok(())
    })
}
