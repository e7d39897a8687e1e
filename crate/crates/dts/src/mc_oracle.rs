//! Seeded Monte-Carlo estimate of the mixture posterior mean, used as an
//! independent check on the closed-form predictor.
//!
//! Draws x_0 from the mixture prior and importance-weights each sample by
//! the forward-process likelihood N(x; sqrt(ᾱ_t)·x_0, (1 − ᾱ_t)·I). The
//! self-normalized estimator never touches the closed-form posterior path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{DtsError, Result};
use crate::gmm::GmmSpec;
use crate::schedule::NoiseSchedule;

/// Minimum sample count accepted by the oracle.
pub const MIN_SAMPLES: usize = 10_000;
/// Effective-sample-size floor below which the estimate is flagged.
pub const MIN_EFFECTIVE_SAMPLES: f64 = 100.0;

/// Self-normalized importance-sampling estimate of E[x_0 | x_t].
#[derive(Clone, Debug)]
pub struct PosteriorEstimate {
    /// Per-coordinate posterior-mean estimate.
    pub estimate: Vec<f64>,
    /// Per-coordinate standard error of the estimate.
    pub stderr: Vec<f64>,
    /// Effective sample size (Σw)² / Σw².
    pub effective_samples: f64,
    /// Set when the effective sample size fell below the reliability floor.
    pub unreliable: bool,
}

impl PosteriorEstimate {
    /// Convert the posterior-mean estimate into noise-prediction space:
    /// ε̂ = (x − sqrt(ᾱ_t)·E[x_0|x_t]) / sqrt(1 − ᾱ_t), with the standard
    /// error scaled accordingly.
    pub fn to_epsilon(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> (Vec<f64>, Vec<f64>) {
        let a = sched.alpha_bar(t);
        let sqrt_a = a.sqrt();
        let inv_sigma = 1.0 / (1.0 - a).sqrt();
        let eps = x
            .iter()
            .zip(&self.estimate)
            .map(|(xk, mk)| (xk - sqrt_a * mk) * inv_sigma)
            .collect();
        let err = self.stderr.iter().map(|s| s * sqrt_a * inv_sigma).collect();
        (eps, err)
    }
}

/// Estimate E[x_0 | x_t = x] by seeded importance sampling.
pub fn mc_posterior_oracle(
    spec: &GmmSpec,
    x: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    samples: usize,
    seed: u64,
) -> Result<PosteriorEstimate> {
    if samples < MIN_SAMPLES {
        return Err(DtsError::Config(format!(
            "oracle needs at least {MIN_SAMPLES} samples, got {samples}"
        )));
    }
    if x.len() != spec.d {
        return Err(DtsError::DimensionMismatch {
            expected: spec.d,
            got: x.len(),
        });
    }
    if t == 0 || t > sched.t_max() {
        return Err(DtsError::Config(format!(
            "oracle timestep must be in [1, {}], got {t}",
            sched.t_max()
        )));
    }
    let a = sched.alpha_bar(t);
    let sqrt_a = a.sqrt();
    let noise_var = 1.0 - a;
    let d = spec.d;

    let cumulative: Vec<f64> = spec
        .components
        .iter()
        .scan(0.0, |acc, c| {
            *acc += c.weight;
            Some(*acc)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Streaming accumulation with running max-rescaling so that only weight
    // *ratios* matter. Moments are taken about c = x / sqrt(a) to avoid
    // cancellation in the variance expansion.
    let center: Vec<f64> = x.iter().map(|xk| xk / sqrt_a).collect();
    let mut max_log_w = f64::NEG_INFINITY;
    let mut w_sum = 0.0;
    let mut w2_sum = 0.0;
    let mut wx = vec![0.0; d];
    let mut w2x = vec![0.0; d];
    let mut w2xx = vec![0.0; d];
    let mut x0 = vec![0.0; d];

    for _ in 0..samples {
        let u: f64 = rng.random();
        let idx = cumulative.iter().position(|&c| u < c).unwrap_or(spec.components.len() - 1);
        let comp = &spec.components[idx];
        let sigma = comp.variance.sqrt();
        let mut log_w = 0.0;
        for k in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            x0[k] = comp.mean[k] + sigma * z;
            let diff = x[k] - sqrt_a * x0[k];
            log_w -= diff * diff;
        }
        let log_w = log_w / (2.0 * noise_var);
        if !log_w.is_finite() {
            continue;
        }
        if log_w > max_log_w {
            let rescale = (max_log_w - log_w).exp();
            let rescale2 = rescale * rescale;
            w_sum *= rescale;
            w2_sum *= rescale2;
            for k in 0..d {
                wx[k] *= rescale;
                w2x[k] *= rescale2;
                w2xx[k] *= rescale2;
            }
            max_log_w = log_w;
        }
        let w = (log_w - max_log_w).exp();
        let w2 = w * w;
        w_sum += w;
        w2_sum += w2;
        for k in 0..d {
            let y = x0[k] - center[k];
            wx[k] += w * y;
            w2x[k] += w2 * y;
            w2xx[k] += w2 * y * y;
        }
    }

    if w_sum <= 0.0 {
        return Err(DtsError::Numeric(
            "all importance weights vanished in the posterior oracle".into(),
        ));
    }

    let mut estimate = vec![0.0; d];
    let mut stderr = vec![0.0; d];
    for k in 0..d {
        let shifted_mean = wx[k] / w_sum;
        estimate[k] = center[k] + shifted_mean;
        let var = (w2xx[k] - 2.0 * shifted_mean * w2x[k] + shifted_mean * shifted_mean * w2_sum)
            / (w_sum * w_sum);
        stderr[k] = var.max(0.0).sqrt();
    }
    let effective_samples = w_sum * w_sum / w2_sum;

    Ok(PosteriorEstimate {
        estimate,
        stderr,
        effective_samples,
        unreliable: effective_samples < MIN_EFFECTIVE_SAMPLES,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{gmm_posterior_mean, GmmComponent};
    use crate::schedule::ScheduleParams;

    fn sched100() -> NoiseSchedule {
        NoiseSchedule::new(ScheduleParams::default_linear(100)).unwrap()
    }

    #[test]
    fn test_sample_floor_enforced() {
        let sched = sched100();
        let spec = GmmSpec::unit_gaussian(1);
        assert!(mc_posterior_oracle(&spec, &[0.3], 50, &sched, 9_999, 0).is_err());
    }

    #[test]
    fn test_same_seed_is_bit_identical() {
        let sched = sched100();
        let spec = GmmSpec::hypercube_corners(2, 0.1);
        let a = mc_posterior_oracle(&spec, &[0.4, -0.2], 50, &sched, 20_000, 7).unwrap();
        let b = mc_posterior_oracle(&spec, &[0.4, -0.2], 50, &sched, 20_000, 7).unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.stderr, b.stderr);
        assert_eq!(a.effective_samples, b.effective_samples);
    }

    #[test]
    fn test_unit_gaussian_matches_closed_form() {
        let sched = sched100();
        let spec = GmmSpec::unit_gaussian(2);
        let x = [0.9, -1.3];
        for t in [5, 50, 95] {
            let est = mc_posterior_oracle(&spec, &x, t, &sched, 200_000, 13).unwrap();
            let scale = sched.alpha_bar(t).sqrt();
            for k in 0..2 {
                let want = scale * x[k];
                let tol = 3.0 * est.stderr[k];
                assert!(
                    (est.estimate[k] - want).abs() <= tol,
                    "t={t} k={k}: {} vs {want} (3se = {tol})",
                    est.estimate[k]
                );
            }
            assert!(!est.unreliable, "unit Gaussian should have healthy ESS");
        }
    }

    #[test]
    fn test_two_component_case_matches_closed_form() {
        let sched = sched100();
        let spec = GmmSpec::new(
            1,
            vec![
                GmmComponent {
                    weight: 0.5,
                    mean: vec![-2.0],
                    variance: 0.1,
                },
                GmmComponent {
                    weight: 0.5,
                    mean: vec![2.0],
                    variance: 0.1,
                },
            ],
        )
        .unwrap();
        let t = 50;
        let x = [0.7];
        let exact = gmm_posterior_mean(&spec, &x, t, &sched).unwrap();
        let est = mc_posterior_oracle(&spec, &x, t, &sched, 1_000_000, 99).unwrap();
        assert!(
            (est.estimate[0] - exact[0]).abs() <= 3.0 * est.stderr[0],
            "{} vs {} (3se = {})",
            est.estimate[0],
            exact[0],
            3.0 * est.stderr[0]
        );
    }

    #[test]
    fn test_low_ess_flagged_unreliable() {
        // Query far in the tail at low noise: almost every prior draw gets
        // negligible weight.
        let sched = sched100();
        let spec = GmmSpec::unit_gaussian(1);
        let est = mc_posterior_oracle(&spec, &[12.0], 1, &sched, 10_000, 3).unwrap();
        assert!(est.unreliable, "ESS was {}", est.effective_samples);
    }
}
