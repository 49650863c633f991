//! Markov order diagnosis from empirical conditional entropies.
//!
//! For an observed symbol sequence the profile is `H0 = ln(#symbols)`,
//! `H1 = H(X_k)`, `H2 = H(X_k, X_k+1) - H1`, `H3 = H(X_k, X_k+1, X_k+2) -
//! H(X_k, X_k+1)`. A sharp drop from `H1` to `H2` followed by a plateau is
//! the signature of first-order dependence.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::MeasurementGraph;

/// Default relative drop, as a fraction of `H0`, that counts as sharp.
pub const DEFAULT_THRESHOLD: f64 = 0.1;

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn entropy(pmf: &[f64]) -> Result<f64> {
    if pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidPmf("entries must be finite and nonnegative".into()));
    }
    let total: f64 = pmf.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidPmf(format!("entries sum to {total}")));
    }
    Ok(pmf.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum())
}

fn entropy_of_counts<K>(counts: &HashMap<K, usize>) -> f64 {
    let total: usize = counts.values().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    let mut c: Vec<usize> = counts.values().copied().collect();
    // Fixed summation order keeps results independent of hash iteration.
    c.sort_unstable();
    c.into_iter()
        .map(|n| {
            let p = n as f64 / total;
            -p * p.ln()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyProfile {
    pub h0: f64,
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub n_states: usize,
    pub h_single: f64,
    pub h_double: f64,
    pub h_triple: f64,
}

impl EntropyProfile {
    pub fn values(&self) -> [f64; 4] {
        [self.h0, self.h1, self.h2, self.h3]
    }

    /// Same profile in another logarithm base.
    pub fn in_base(&self, base: f64) -> [f64; 4] {
        self.values().map(|h| h / base.ln())
    }

    /// Relative drops `(H_i - H_{i+1}) / H0` for `i = 1, 2`; zero when `H0 = 0`.
    pub fn relative_drops(&self) -> [f64; 2] {
        if self.h0 <= 0.0 {
            return [0.0, 0.0];
        }
        [(self.h1 - self.h2) / self.h0, (self.h2 - self.h3) / self.h0]
    }
}

/// Plug-in estimates from sliding-window frequency counts.
pub fn empirical_profile<S: Eq + Hash + Clone>(seq: &[S]) -> Result<EntropyProfile> {
    if seq.len() < 3 {
        return Err(Error::Parameter(format!("need at least 3 observations, got {}", seq.len())));
    }
    let mut single: HashMap<&S, usize> = HashMap::new();
    let mut double: HashMap<(&S, &S), usize> = HashMap::new();
    let mut triple: HashMap<(&S, &S, &S), usize> = HashMap::new();
    for s in seq {
        *single.entry(s).or_default() += 1;
    }
    for w in seq.windows(2) {
        *double.entry((&w[0], &w[1])).or_default() += 1;
    }
    for w in seq.windows(3) {
        *triple.entry((&w[0], &w[1], &w[2])).or_default() += 1;
    }
    let n_states = single.len();
    let h_single = entropy_of_counts(&single);
    let h_double = entropy_of_counts(&double);
    let h_triple = entropy_of_counts(&triple);
    Ok(EntropyProfile {
        h0: (n_states as f64).ln(),
        h1: h_single,
        h2: h_double - h_single,
        h3: h_triple - h_double,
        n_states,
        h_single,
        h_double,
        h_triple,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    Zero,
    One,
    Two,
    Inconclusive,
}

impl std::fmt::Display for Order {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Order::Zero => "0",
            Order::One => "1",
            Order::Two => "2",
            Order::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrderVerdict {
    pub order: Order,
    /// `(H1 - H2) / H0` and `(H2 - H3) / H0`.
    pub drops: [f64; 2],
    pub threshold: f64,
}

/// A drop is sharp at or above `threshold`, flat below half of it, and
/// ambiguous in between. Any ambiguous drop makes the verdict inconclusive.
pub fn classify_order(profile: &EntropyProfile, threshold: f64) -> OrderVerdict {
    #[derive(PartialEq)]
    enum Drop {
        Flat,
        Ambiguous,
        Sharp,
    }
    let drops = profile.relative_drops();
    let kind = |d: f64| {
        if d >= threshold {
            Drop::Sharp
        } else if d < threshold / 2.0 {
            Drop::Flat
        } else {
            Drop::Ambiguous
        }
    };
    let order = match (kind(drops[0]), kind(drops[1])) {
        (Drop::Ambiguous, _) | (_, Drop::Ambiguous) => Order::Inconclusive,
        (Drop::Flat, Drop::Flat) => Order::Zero,
        (Drop::Sharp, Drop::Flat) => Order::One,
        (_, Drop::Sharp) => Order::Two,
    };
    OrderVerdict { order, drops, threshold }
}

/// Maps each graph to a symbol by its sorted edge list, first appearance first.
pub fn graph_symbols(graphs: &[MeasurementGraph]) -> Vec<usize> {
    let mut ids: BTreeMap<Vec<(usize, usize)>, usize> = BTreeMap::new();
    graphs
        .iter()
        .map(|g| {
            let next = ids.len();
            *ids.entry(g.canonical_key()).or_insert(next)
        })
        .collect()
}

pub fn test_graph_process(graphs: &[MeasurementGraph], threshold: f64) -> Result<(EntropyProfile, OrderVerdict)> {
    let profile = empirical_profile(&graph_symbols(graphs))?;
    Ok((profile, classify_order(&profile, threshold)))
}
