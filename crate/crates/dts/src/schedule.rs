//! Noise schedules: the cumulative signal-retention coefficients ᾱ_t that
//! drive every denoising update.
//!
//! A schedule owns `alpha_bar[0..=T]` with `alpha_bar[0] = 1` (the noiseless
//! endpoint) and strictly decreasing values on `[1, T]`. Two generators are
//! provided: a linear-β ramp (the default, 1e-4 → 0.02) and a squared-cosine
//! schedule.

use serde::{Deserialize, Serialize};

use crate::error::{DtsError, Result};

/// Default β at t = 1 for the linear schedule.
pub const DEFAULT_BETA_START: f64 = 1e-4;
/// Default β at t = T for the linear schedule.
pub const DEFAULT_BETA_END: f64 = 0.02;
/// Default offset for the cosine schedule.
pub const DEFAULT_COSINE_S: f64 = 0.008;

/// Schedule generator parameters. Serializes to the on-disk schedule format:
/// `{"kind": "linear-beta", "T": ..., "beta_start": ..., "beta_end": ...}` or
/// `{"kind": "cosine", "T": ..., "cosine_s": ...}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ScheduleParams {
    /// β interpolated linearly from `beta_start` (t = 1) to `beta_end` (t = T);
    /// ᾱ_t = ∏_{s≤t} (1 − β_s).
    #[serde(rename = "linear-beta")]
    LinearBeta {
        #[serde(rename = "T")]
        t_max: usize,
        beta_start: f64,
        beta_end: f64,
    },
    /// Squared-cosine profile ᾱ_t ∝ cos²((t/T + s)/(1 + s) · π/2), realised
    /// through per-step betas clamped at 0.999.
    #[serde(rename = "cosine")]
    Cosine {
        #[serde(rename = "T")]
        t_max: usize,
        cosine_s: f64,
    },
}

impl ScheduleParams {
    /// Linear-β parameters with the default 1e-4 → 0.02 ramp.
    pub fn default_linear(t_max: usize) -> Self {
        ScheduleParams::LinearBeta {
            t_max,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
        }
    }

    /// Cosine parameters with the default offset.
    pub fn default_cosine(t_max: usize) -> Self {
        ScheduleParams::Cosine {
            t_max,
            cosine_s: DEFAULT_COSINE_S,
        }
    }

    /// Maximum timestep T.
    pub fn t_max(&self) -> usize {
        match *self {
            ScheduleParams::LinearBeta { t_max, .. } | ScheduleParams::Cosine { t_max, .. } => {
                t_max
            }
        }
    }
}

/// A realised noise schedule: `alpha_bar[t]` for t in `0..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Generate a schedule from parameters, validating the result.
    pub fn new(params: ScheduleParams) -> Result<Self> {
        let t_max = params.t_max();
        if t_max < 2 {
            return Err(DtsError::Config(format!(
                "schedule needs T >= 2, got {t_max}"
            )));
        }
        let alpha_bar = match params {
            ScheduleParams::LinearBeta {
                t_max,
                beta_start,
                beta_end,
            } => {
                if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
                    return Err(DtsError::Config(format!(
                        "beta range must satisfy 0 < beta_start <= beta_end < 1, \
                         got [{beta_start}, {beta_end}]"
                    )));
                }
                linear_beta_alpha_bar(t_max, beta_start, beta_end)
            }
            ScheduleParams::Cosine { t_max, cosine_s } => {
                if !(cosine_s > 0.0 && cosine_s.is_finite()) {
                    return Err(DtsError::Config(format!(
                        "cosine offset must be positive and finite, got {cosine_s}"
                    )));
                }
                cosine_alpha_bar(t_max, cosine_s)
            }
        };
        let sched = NoiseSchedule { params, alpha_bar };
        sched.check_invariants(true)?;
        Ok(sched)
    }

    /// Build directly from raw ᾱ values. Checks range and the `alpha_bar[0] = 1`
    /// convention but not strict monotonicity, so degenerate (e.g. constant)
    /// schedules can be constructed for diagnostics.
    #[cfg_attr(not(test), allow(dead_code))]
    pub(crate) fn from_alpha_bar(params: ScheduleParams, alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() != params.t_max() + 1 {
            return Err(DtsError::Config(format!(
                "alpha_bar must have T + 1 = {} entries, got {}",
                params.t_max() + 1,
                alpha_bar.len()
            )));
        }
        let sched = NoiseSchedule { params, alpha_bar };
        sched.check_invariants(false)?;
        Ok(sched)
    }

    fn check_invariants(&self, strict_decrease: bool) -> Result<()> {
        if self.alpha_bar[0] != 1.0 {
            return Err(DtsError::Config(format!(
                "alpha_bar[0] must be exactly 1, got {}",
                self.alpha_bar[0]
            )));
        }
        for t in 1..self.alpha_bar.len() {
            let a = self.alpha_bar[t];
            if !(a > 0.0 && a <= 1.0) {
                return Err(DtsError::Config(format!(
                    "alpha_bar[{t}] = {a} outside (0, 1]"
                )));
            }
            if strict_decrease && a >= self.alpha_bar[t - 1] {
                return Err(DtsError::Config(format!(
                    "alpha_bar not strictly decreasing at t = {t}"
                )));
            }
        }
        Ok(())
    }

    /// Maximum timestep T.
    pub fn t_max(&self) -> usize {
        self.params.t_max()
    }

    /// ᾱ_t. Panics if `t > T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// The generator parameters this schedule was built from.
    pub fn params(&self) -> &ScheduleParams {
        &self.params
    }
}

// Schedules serialize as their parameters; values are regenerated on load so
// a deserialized schedule is always validated.
impl Serialize for NoiseSchedule {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.params.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for NoiseSchedule {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let params = ScheduleParams::deserialize(deserializer)?;
        NoiseSchedule::new(params).map_err(serde::de::Error::custom)
    }
}

fn linear_beta_alpha_bar(t_max: usize, beta_start: f64, beta_end: f64) -> Vec<f64> {
    let mut alpha_bar = Vec::with_capacity(t_max + 1);
    alpha_bar.push(1.0);
    let mut prod = 1.0;
    for s in 1..=t_max {
        let frac = (s - 1) as f64 / (t_max - 1) as f64;
        let beta = beta_start + frac * (beta_end - beta_start);
        prod *= 1.0 - beta;
        alpha_bar.push(prod);
    }
    alpha_bar
}

fn cosine_alpha_bar(t_max: usize, s: f64) -> Vec<f64> {
    let f = |u: f64| ((u + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
    let mut alpha_bar = Vec::with_capacity(t_max + 1);
    alpha_bar.push(1.0);
    let mut prod = 1.0;
    for t in 1..=t_max {
        let beta = 1.0 - f(t as f64 / t_max as f64) / f((t - 1) as f64 / t_max as f64);
        prod *= 1.0 - beta.min(0.999);
        alpha_bar.push(prod);
    }
    alpha_bar
}

#[cfg(test)]
mod tests {
    use super::*;
    use num::{BigRational, FromPrimitive, ToPrimitive};
    use proptest::prelude::*;

    /// Exact-rational product oracle for the linear-β schedule, independent
    /// of the f64 path above.
    fn linear_alpha_bar_oracle(t_max: usize, beta_start: f64, beta_end: f64) -> f64 {
        let start = BigRational::from_f64(beta_start).unwrap();
        let end = BigRational::from_f64(beta_end).unwrap();
        let one = BigRational::from_integer(1.into());
        let span = BigRational::from_integer(((t_max - 1) as i64).into());
        let mut prod = one.clone();
        for s in 1..=t_max {
            let frac = BigRational::from_integer(((s - 1) as i64).into()) / span.clone();
            let beta = start.clone() + frac * (end.clone() - start.clone());
            prod *= one.clone() - beta;
        }
        prod.to_f64().unwrap()
    }

    #[test]
    fn test_t_too_small_rejected() {
        let p = ScheduleParams::LinearBeta {
            t_max: 1,
            beta_start: 0.5,
            beta_end: 0.5,
        };
        assert!(matches!(NoiseSchedule::new(p), Err(DtsError::Config(_))));
    }

    #[test]
    fn test_invalid_beta_range_rejected() {
        for (lo, hi) in [(0.0, 0.5), (0.5, 0.4), (0.1, 1.0), (-0.1, 0.5)] {
            let p = ScheduleParams::LinearBeta {
                t_max: 10,
                beta_start: lo,
                beta_end: hi,
            };
            assert!(
                matches!(NoiseSchedule::new(p), Err(DtsError::Config(_))),
                "range [{lo}, {hi}] should be rejected"
            );
        }
    }

    #[test]
    fn test_constant_beta_half() {
        let p = ScheduleParams::LinearBeta {
            t_max: 2,
            beta_start: 0.5,
            beta_end: 0.5,
        };
        let sched = NoiseSchedule::new(p).unwrap();
        assert_eq!(sched.alpha_bar(0), 1.0);
        assert_eq!(sched.alpha_bar(1), 0.5);
        assert_eq!(sched.alpha_bar(2), 0.25);
    }

    #[test]
    fn test_linear_default_matches_exact_product_oracle() {
        let sched = NoiseSchedule::new(ScheduleParams::default_linear(100)).unwrap();
        let oracle = linear_alpha_bar_oracle(100, DEFAULT_BETA_START, DEFAULT_BETA_END);
        // Frozen from the rational oracle; the f64 product must agree to 1e-12.
        let frozen = 0.3635632480554919;
        assert!(
            (oracle - frozen).abs() / frozen < 1e-13,
            "oracle drifted: {oracle} vs frozen {frozen}"
        );
        let got = sched.alpha_bar(100);
        assert!(
            (got - frozen).abs() / frozen < 1e-12,
            "alpha_bar[100] = {got}, expected {frozen}"
        );
    }

    #[test]
    fn test_cosine_valid_and_decreasing() {
        let sched = NoiseSchedule::new(ScheduleParams::default_cosine(100)).unwrap();
        assert_eq!(sched.alpha_bar(0), 1.0);
        for t in 1..=100 {
            assert!(sched.alpha_bar(t) < sched.alpha_bar(t - 1));
            assert!(sched.alpha_bar(t) > 0.0);
        }
    }

    #[test]
    fn test_serde_round_trip_and_shape() {
        let sched = NoiseSchedule::new(ScheduleParams::default_linear(100)).unwrap();
        let json = serde_json::to_string(&sched).unwrap();
        assert_eq!(
            json,
            r#"{"kind":"linear-beta","T":100,"beta_start":0.0001,"beta_end":0.02}"#
        );
        let back: NoiseSchedule = serde_json::from_str(&json).unwrap();
        assert_eq!(back, sched);

        let cos = NoiseSchedule::new(ScheduleParams::default_cosine(50)).unwrap();
        let json = serde_json::to_string(&cos).unwrap();
        assert_eq!(json, r#"{"kind":"cosine","T":50,"cosine_s":0.008}"#);
    }

    #[test]
    fn test_deserialize_rejects_invalid() {
        let bad = r#"{"kind":"linear-beta","T":1,"beta_start":0.1,"beta_end":0.2}"#;
        assert!(serde_json::from_str::<NoiseSchedule>(bad).is_err());
    }

    proptest! {
        #[test]
        fn prop_generated_schedules_strictly_decrease(
            t_max in 2usize..200,
            beta_start in 1e-6f64..0.05,
            extra in 0.0f64..0.5,
            cosine in proptest::bool::ANY,
        ) {
            let params = if cosine {
                ScheduleParams::Cosine { t_max, cosine_s: 0.001 + extra }
            } else {
                ScheduleParams::LinearBeta {
                    t_max,
                    beta_start,
                    beta_end: (beta_start + extra).min(0.999),
                }
            };
            let sched = NoiseSchedule::new(params).unwrap();
            prop_assert_eq!(sched.alpha_bar(0), 1.0);
            for t in 1..=t_max {
                prop_assert!(sched.alpha_bar(t) < sched.alpha_bar(t - 1));
                prop_assert!(sched.alpha_bar(t) > 0.0 && sched.alpha_bar(t) <= 1.0);
            }
        }
    }
}
