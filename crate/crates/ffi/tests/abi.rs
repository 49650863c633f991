use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::ptr;

use relsync_ffi::*;

fn scenario_path(name: &str) -> CString {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios").join(name);
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = relsync_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(name: &str) -> *mut RelsyncScenario {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { relsync_scenario_load(scenario_path(name).as_ptr(), &mut h) }, RelsyncStatus::Ok);
    assert!(!h.is_null());
    h
}

const EDGELESS: &str = "seed = 1\nsteps = 10\n[nodes]\nbasic = 2\nreference = 1\n\
[topology]\nkind = \"chain\"\ntransition = [1.0]\nstates = [[]]\n";

#[test]
fn four_node_analysis() {
    let h = load("four_node.toml");
    let (mut nb, mut nr, mut steps, mut seed) = (0, 0, 0, 0);
    unsafe {
        assert_eq!(relsync_scenario_shape(h, &mut nb, &mut nr, &mut steps), RelsyncStatus::Ok);
        assert_eq!(relsync_scenario_seed(h, &mut seed), RelsyncStatus::Ok);
    }
    assert_eq!((nb, nr, steps, seed), (3, 1, 500, 20240917));

    let mut cert = RelsyncCertificate::default();
    assert_eq!(unsafe { relsync_analyze(h, &mut cert) }, RelsyncStatus::Ok);
    assert!(cert.ms_convergent && cert.union_connected && cert.references_reach_all);
    assert!((cert.rho - 0.9652).abs() < 1e-3, "{}", cert.rho);

    let (mut mean, mut var) = ([f64::NAN; 3], [f64::NAN; 3]);
    assert_eq!(unsafe { relsync_steady_state(h, mean.as_mut_ptr(), var.as_mut_ptr(), 3) }, RelsyncStatus::Ok);
    assert!(mean.iter().all(|m| m.abs() < 1e-12));
    assert!(var.iter().all(|&v| v > 1e-5 && v < 1e-4));

    let mut small = [0.0; 2];
    let status = unsafe { relsync_steady_state(h, small.as_mut_ptr(), ptr::null_mut(), 2) };
    assert_eq!(status, RelsyncStatus::BufferTooSmall);
    assert!(last_error().contains("mean"));
    unsafe { relsync_scenario_free(h) };
}

#[test]
fn montecarlo_matches_limits() {
    let h = load("four_node.toml");
    let mut stats = ptr::null_mut();
    assert_eq!(unsafe { relsync_montecarlo(h, 5, 400, 2, &mut stats) }, RelsyncStatus::Ok);
    let (mut trials, mut steps, mut nb) = (0, 0, 0);
    unsafe { relsync_stats_shape(stats, &mut trials, &mut steps, &mut nb) };
    assert_eq!((trials, steps, nb), (400, 500, 3));

    let mut limit = [0.0; 3];
    unsafe { relsync_steady_state(h, ptr::null_mut(), limit.as_mut_ptr(), 3) };
    let (mut mean, mut var) = ([0.0; 3], [0.0; 3]);
    assert_eq!(unsafe { relsync_stats_at(stats, 500, mean.as_mut_ptr(), var.as_mut_ptr(), 3) }, RelsyncStatus::Ok);
    for u in 0..3 {
        assert!((var[u] - limit[u]).abs() / limit[u] < 0.3, "{var:?} vs {limit:?}");
        assert!(mean[u].abs() < 5.0 * (var[u] / 400.0).sqrt());
    }
    assert_eq!(unsafe { relsync_stats_at(stats, 501, mean.as_mut_ptr(), ptr::null_mut(), 3) }, RelsyncStatus::OutOfRange);
    unsafe {
        relsync_stats_free(stats);
        relsync_scenario_free(h);
    }
}

#[test]
fn simulate_pins_the_reference() {
    let h = load("four_node.toml");
    let mut buf = vec![f64::NAN; 501 * 4];
    assert_eq!(unsafe { relsync_simulate(h, 1, 0, buf.as_mut_ptr(), buf.len()) }, RelsyncStatus::Ok);
    assert!(buf.chunks(4).all(|row| row[3] == 0.0));
    assert_eq!(&buf[..4], &[0.0; 4]);
    assert!(buf[500 * 4..].iter().zip([1.5, -0.7, 0.4]).all(|(x, t)| (x - t).abs() < 0.05));

    let mut again = vec![0.0; buf.len()];
    unsafe { relsync_simulate(h, 1, 0, again.as_mut_ptr(), again.len()) };
    assert_eq!(buf, again);
    assert_eq!(unsafe { relsync_simulate(h, 1, 0, again.as_mut_ptr(), 10) }, RelsyncStatus::BufferTooSmall);
    unsafe { relsync_scenario_free(h) };
}

#[test]
fn error_codes() {
    let mut h = ptr::null_mut();
    unsafe {
        let bad = CString::new("seed = [").unwrap();
        assert_eq!(relsync_scenario_from_toml(bad.as_ptr(), &mut h), RelsyncStatus::Config);
        assert!(h.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(relsync_scenario_from_toml(ptr::null(), &mut h), RelsyncStatus::NullPointer);
        let missing = CString::new("/nonexistent/relsync.toml").unwrap();
        assert_eq!(relsync_scenario_load(missing.as_ptr(), &mut h), RelsyncStatus::Io);

        let mismatch = CString::new(EDGELESS.replace("reference = 1", "reference = 1\ntrue_values = [1.0]")).unwrap();
        assert_eq!(relsync_scenario_from_toml(mismatch.as_ptr(), &mut h), RelsyncStatus::Dimension);

        let edgeless = CString::new(EDGELESS).unwrap();
        assert_eq!(relsync_scenario_from_toml(edgeless.as_ptr(), &mut h), RelsyncStatus::Ok);
        assert!(relsync_last_error().is_null());
        let mut cert = RelsyncCertificate::default();
        assert_eq!(relsync_analyze(h, &mut cert), RelsyncStatus::Ok);
        assert_eq!(cert.rho, 1.0);
        assert!(!cert.ms_convergent);
        let mut mean = [0.0; 2];
        assert_eq!(relsync_steady_state(h, mean.as_mut_ptr(), ptr::null_mut(), 2), RelsyncStatus::NotConvergent);
        let mut stats = ptr::null_mut();
        assert_eq!(relsync_montecarlo(h, 1, 0, 1, &mut stats), RelsyncStatus::InvalidModel);
        assert!(stats.is_null());
        relsync_scenario_free(h);

        let mob = load("rwp_3_order.toml");
        assert_eq!(relsync_analyze(mob, &mut cert), RelsyncStatus::NotAChain);
        relsync_scenario_free(mob);

        relsync_scenario_free(ptr::null_mut());
        relsync_stats_free(ptr::null_mut());
        assert_eq!(relsync_analyze(ptr::null(), &mut cert), RelsyncStatus::NullPointer);
    }
}
