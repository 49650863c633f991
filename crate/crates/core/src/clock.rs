//! Affine clock model and its reduction to scalar relative measurements.
//!
//! A clock reads `tau(t) = alpha * t + beta`. Skew estimation works on
//! log-skews `x = ln(alpha)`, offset estimation works on `x = beta`; both are
//! instances of the scalar problem solved by [`crate::estimator`].

use crate::error::{Error, Result};
use crate::estimator::{NoiseModel, PairNoise};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clock {
    alpha: f64,
    beta: f64,
}

impl Clock {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::Parameter(format!("clock skew must be positive and finite, got {alpha}")));
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Local reading at global time `t`.
    pub fn local_time(&self, t: f64) -> f64 {
        self.alpha * t + self.beta
    }

    /// Global time corresponding to local reading `tau`.
    pub fn global_time(&self, tau: f64) -> f64 {
        (tau - self.beta) / self.alpha
    }

    pub fn log_skew(&self) -> f64 {
        self.alpha.ln()
    }
}

/// Skew and offset of `u` relative to `v`: `tau_u = alpha_uv * tau_v + beta_uv`.
pub fn relative_params(u: &Clock, v: &Clock) -> (f64, f64) {
    let ratio = u.alpha / v.alpha;
    (ratio, u.beta - v.beta * ratio)
}

/// Log-domain relative skew measurement `ln(alpha_u) - ln(alpha_v) + eps_s`.
pub fn skew_measurement(u: &Clock, v: &Clock, eps_s: f64) -> f64 {
    u.log_skew() - v.log_skew() + eps_s
}

/// Structural part of the offset-channel noise, `beta_v (1 - alpha_u / alpha_v)`.
/// Nonzero whenever the skews differ, so the offset channel is biased even
/// when the pairwise estimate is not.
pub fn offset_bias(u: &Clock, v: &Clock) -> f64 {
    v.beta * (1.0 - u.alpha / v.alpha)
}

/// Relative offset estimate `beta_u - beta_v + eps_o` with
/// `eps_o = offset_bias(u, v) + e_o`.
pub fn offset_measurement(u: &Clock, v: &Clock, e_o: f64) -> f64 {
    u.beta - v.beta + offset_bias(u, v) + e_o
}

/// Clock estimate from estimated node variables.
pub fn recover_clock(log_skew: f64, offset: f64) -> Clock {
    Clock { alpha: log_skew.exp(), beta: offset }
}

/// Log-skew node variables.
pub fn skew_variables(clocks: &[Clock]) -> Vec<f64> {
    clocks.iter().map(Clock::log_skew).collect()
}

/// Offset node variables.
pub fn offset_variables(clocks: &[Clock]) -> Vec<f64> {
    clocks.iter().map(Clock::beta).collect()
}

/// Noise model for the skew channel: `eps_s` zero-mean with the given variance.
pub fn skew_noise(clocks: &[Clock], variance: f64) -> NoiseModel {
    NoiseModel::uniform(clocks.len(), PairNoise::new(0.0, variance))
}

/// Noise model for the offset channel. The lower-indexed node measures, so
/// pair `(u, v)` with `u < v` carries mean `offset_bias(u, v)` plus the mean
/// of `e_o`, and the higher-indexed node sees the negation.
pub fn offset_noise(clocks: &[Clock], e_o: PairNoise) -> NoiseModel {
    let n = clocks.len();
    let mut model = NoiseModel::uniform(n, e_o);
    for u in 0..n {
        for v in u + 1..n {
            let bias = offset_bias(&clocks[u], &clocks[v]);
            model.set_pair(u, v, PairNoise::new(e_o.mean + bias, e_o.variance));
        }
    }
    model
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(a: f64, b: f64) -> Clock {
        Clock::new(a, b).unwrap()
    }

    #[test]
    fn rejects_nonpositive_skew() {
        assert!(Clock::new(0.0, 1.0).is_err());
        assert!(Clock::new(-1.0, 1.0).is_err());
    }

    #[test]
    fn local_time_examples() {
        assert_eq!(c(1.0, 0.0).local_time(5.0), 5.0);
        assert_eq!(c(2.0, 1.0).local_time(3.0), 7.0);
    }

    #[test]
    fn relative_params_examples() {
        assert_eq!(relative_params(&c(1.3, 2.0), &c(1.3, 2.0)), (1.0, 0.0));
        assert_eq!(relative_params(&c(1.5, 4.0), &c(1.5, 1.0)).1, 3.0);
        let (u, v) = (c(2.0, 1.0), c(1.0, 3.0));
        assert_eq!(relative_params(&u, &v), (2.0, -5.0));
        for t in [0.0, 1.0] {
            assert_eq!(u.local_time(t), 2.0 * v.local_time(t) - 5.0);
        }
    }

    #[test]
    fn skew_measurement_examples() {
        assert_eq!(skew_measurement(&c(1.2, 0.0), &c(1.2, 5.0), 0.0), 0.0);
        let v = c(0.9, 0.0);
        let u = c(std::f64::consts::E * 0.9, 0.0);
        assert!((skew_measurement(&u, &v, 0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn offset_measurement_examples() {
        let (u, v) = (c(1.1, 2.0), c(1.1, 0.5));
        assert!((offset_measurement(&u, &v, 0.25) - (1.5 + 0.25)).abs() < 1e-15);
        let (u, v) = (c(2.0, 1.0), c(1.0, 3.0));
        assert_eq!(offset_measurement(&u, &v, 0.0), -5.0);
        assert_eq!(offset_measurement(&u, &v, 0.0), relative_params(&u, &v).1);
        let (u, v) = (c(1.7, 4.0), c(0.8, 0.0));
        assert_eq!(offset_measurement(&u, &v, 0.0), 4.0);
    }

    #[test]
    fn recovery_examples() {
        let truth = c(1.25, -0.4);
        let est = recover_clock(truth.log_skew(), truth.beta());
        assert!((est.alpha() - 1.25).abs() < 1e-15);
        assert_eq!(est.beta(), -0.4);
        assert_eq!(recover_clock(0.0, 0.0).alpha(), 1.0);
        let t = 12.5;
        assert!((est.global_time(truth.local_time(t)) - t).abs() < 1e-12);
    }

    #[test]
    fn offset_noise_carries_structural_bias() {
        let clocks = [c(1.0, 0.0), c(2.0, 1.0), c(1.0, 3.0)];
        let m = offset_noise(&clocks, PairNoise::new(0.0, 1e-4));
        assert_eq!(m.pair(1, 2).mean, offset_bias(&clocks[1], &clocks[2]));
        assert_eq!(m.pair(1, 2).mean, -3.0);
        assert_eq!(m.pair(0, 2).mean, 0.0);
    }

    proptest! {
        #[test]
        fn relative_relation_holds(au in 0.5f64..2.0, bu in -5.0f64..5.0, av in 0.5f64..2.0, bv in -5.0f64..5.0, t in -100.0f64..100.0) {
            let (u, v) = (c(au, bu), c(av, bv));
            let (a, b) = relative_params(&u, &v);
            let lhs = u.local_time(t);
            let rhs = a * v.local_time(t) + b;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn skew_measurement_antisymmetric(au in 0.5f64..2.0, av in 0.5f64..2.0, e in -0.1f64..0.1) {
            let (u, v) = (c(au, 0.0), c(av, 0.0));
            prop_assert!((skew_measurement(&u, &v, e) + skew_measurement(&v, &u, -e)).abs() < 1e-15);
        }
    }
}
