//! Closed-form noise predictors for Gaussian-mixture data.
//!
//! For data x_0 drawn from an isotropic Gaussian mixture and the forward
//! process x_t = sqrt(ᾱ_t)·x_0 + sqrt(1 − ᾱ_t)·ε, the Bayes-optimal noise
//! prediction has an exact expression: the posterior mean E[x_0 | x_t] is a
//! responsibility-weighted blend of per-component conditional means, and
//!
//! ```text
//! ε̂(x, t) = (x − sqrt(ᾱ_t) · E[x_0 | x_t = x]) / sqrt(1 − ᾱ_t)
//! ```
//!
//! Multi-component mixtures make this predictor genuinely nonlinear in x,
//! which is what gives large-stride trajectories their accumulated error.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DtsError, Result};
use crate::latent::{ensure_finite, EpsilonPredictor};
use crate::schedule::NoiseSchedule;

const LOG_2PI: f64 = 1.8378770664093453;

/// One isotropic mixture component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    /// Mixture weight in (0, 1].
    #[serde(rename = "w")]
    pub weight: f64,
    /// Component mean, length d.
    #[serde(rename = "mu")]
    pub mean: Vec<f64>,
    /// Isotropic variance σ².
    #[serde(rename = "var")]
    pub variance: f64,
}

/// An isotropic Gaussian mixture over R^d. Serializes as
/// `{"d": ..., "components": [{"w", "mu", "var"}, ...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmSpecRaw")]
pub struct GmmSpec {
    pub d: usize,
    pub components: Vec<GmmComponent>,
}

#[derive(Deserialize)]
struct GmmSpecRaw {
    d: usize,
    components: Vec<GmmComponent>,
}

impl TryFrom<GmmSpecRaw> for GmmSpec {
    type Error = DtsError;
    fn try_from(raw: GmmSpecRaw) -> Result<Self> {
        GmmSpec::new(raw.d, raw.components)
    }
}

impl GmmSpec {
    /// Validate and build a mixture spec.
    pub fn new(d: usize, components: Vec<GmmComponent>) -> Result<Self> {
        if d == 0 {
            return Err(DtsError::Config("mixture dimension must be positive".into()));
        }
        if components.is_empty() {
            return Err(DtsError::Config("mixture needs at least one component".into()));
        }
        let mut weight_sum = 0.0;
        for (i, c) in components.iter().enumerate() {
            if !(c.weight > 0.0 && c.weight <= 1.0) {
                return Err(DtsError::Config(format!(
                    "component {i} weight {} outside (0, 1]",
                    c.weight
                )));
            }
            if !(c.variance > 0.0 && c.variance.is_finite()) {
                return Err(DtsError::Config(format!(
                    "component {i} variance {} must be positive and finite",
                    c.variance
                )));
            }
            if c.mean.len() != d {
                return Err(DtsError::Config(format!(
                    "component {i} mean has dimension {}, expected {d}",
                    c.mean.len()
                )));
            }
            ensure_finite(&c.mean, "component mean")
                .map_err(|_| DtsError::Config(format!("component {i} mean is non-finite")))?;
            weight_sum += c.weight;
        }
        if (weight_sum - 1.0).abs() > 1e-12 {
            return Err(DtsError::Config(format!(
                "component weights sum to {weight_sum}, expected 1"
            )));
        }
        Ok(GmmSpec { d, components })
    }

    /// The standard normal in d dimensions: one component, μ = 0, σ² = 1.
    /// Its noise predictor is exactly ε̂(x, t) = sqrt(1 − ᾱ_t) · x.
    pub fn unit_gaussian(d: usize) -> Self {
        GmmSpec {
            d,
            components: vec![GmmComponent {
                weight: 1.0,
                mean: vec![0.0; d],
                variance: 1.0,
            }],
        }
    }

    /// The default desk-scale task: four equally weighted components at
    /// distinct corners of the {±1}^d hypercube.
    pub fn hypercube_corners(d: usize, variance: f64) -> Self {
        assert!(d >= 2, "corner mixture needs d >= 2");
        let patterns: [fn(usize) -> f64; 4] = [
            |_| 1.0,
            |_| -1.0,
            |i| if i % 2 == 0 { 1.0 } else { -1.0 },
            |i| if i % 2 == 0 { -1.0 } else { 1.0 },
        ];
        let components = patterns
            .iter()
            .map(|sign| GmmComponent {
                weight: 0.25,
                mean: (0..d).map(sign).collect(),
                variance,
            })
            .collect();
        GmmSpec { d, components }
    }

    /// Stable content hash, used to tie run artifacts to their mixture.
    pub fn id(&self) -> String {
        let json = serde_json::to_string(self).expect("mixture serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }
}

fn noised_scale_checked(sched: &NoiseSchedule, t: usize) -> Result<(f64, f64)> {
    if t == 0 || t > sched.t_max() {
        return Err(DtsError::Config(format!(
            "predictor timestep must be in [1, {}], got {t}",
            sched.t_max()
        )));
    }
    let a = sched.alpha_bar(t);
    let noise_var = 1.0 - a;
    if noise_var <= 0.0 {
        return Err(DtsError::Numeric(format!(
            "no noise at t = {t} (alpha_bar = {a}); predictor undefined"
        )));
    }
    Ok((a, noise_var))
}

/// Exact posterior mean E[x_0 | x_t = x] under the mixture prior.
///
/// Responsibilities are computed in log-space with max-subtraction: near
/// t = 1 the per-component marginals are extremely peaked and the raw
/// densities underflow long before the ratios do.
pub fn gmm_posterior_mean(
    spec: &GmmSpec,
    x: &[f64],
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if x.len() != spec.d {
        return Err(DtsError::DimensionMismatch {
            expected: spec.d,
            got: x.len(),
        });
    }
    ensure_finite(x, "query point")?;
    let (a, noise_var) = noised_scale_checked(sched, t)?;
    let sqrt_a = a.sqrt();
    let d = spec.d as f64;

    // log responsibilities: log w_i + log N(x; sqrt(a)·μ_i, (a σ_i² + 1−a) I)
    let mut log_resp = Vec::with_capacity(spec.components.len());
    for c in &spec.components {
        let marginal_var = a * c.variance + noise_var;
        let mut sq = 0.0;
        for (xk, mk) in x.iter().zip(&c.mean) {
            let diff = xk - sqrt_a * mk;
            sq += diff * diff;
        }
        log_resp.push(
            c.weight.ln() - 0.5 * d * (LOG_2PI + marginal_var.ln()) - 0.5 * sq / marginal_var,
        );
    }
    let max_lr = log_resp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max_lr.is_finite() {
        return Err(DtsError::Numeric(
            "all mixture responsibilities underflowed".into(),
        ));
    }
    let mut resp: Vec<f64> = log_resp.iter().map(|lr| (lr - max_lr).exp()).collect();
    let norm: f64 = resp.iter().sum();
    for r in &mut resp {
        *r /= norm;
    }

    // Blend of per-component conditional means
    //   m_i = μ_i + (sqrt(a) σ_i² / (a σ_i² + 1−a)) · (x − sqrt(a) μ_i).
    let mut mean = vec![0.0; spec.d];
    for (c, r) in spec.components.iter().zip(&resp) {
        let gain = sqrt_a * c.variance / (a * c.variance + noise_var);
        for k in 0..spec.d {
            mean[k] += r * (c.mean[k] + gain * (x[k] - sqrt_a * c.mean[k]));
        }
    }
    Ok(mean)
}

/// The Bayes-optimal noise prediction for the mixture prior.
pub fn gmm_epsilon(spec: &GmmSpec, x: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    let (a, noise_var) = noised_scale_checked(sched, t)?;
    let mean = gmm_posterior_mean(spec, x, t, sched)?;
    let sqrt_a = a.sqrt();
    let inv_sigma = 1.0 / noise_var.sqrt();
    Ok(x.iter()
        .zip(&mean)
        .map(|(xk, mk)| (xk - sqrt_a * mk) * inv_sigma)
        .collect())
}

/// An `EpsilonPredictor` backed by the exact mixture posterior.
#[derive(Clone, Debug)]
pub struct GmmPredictor {
    spec: GmmSpec,
    sched: NoiseSchedule,
}

impl GmmPredictor {
    pub fn new(spec: GmmSpec, sched: NoiseSchedule) -> Self {
        GmmPredictor { spec, sched }
    }

    pub fn spec(&self) -> &GmmSpec {
        &self.spec
    }
}

impl EpsilonPredictor for GmmPredictor {
    fn dim(&self) -> usize {
        self.spec.d
    }

    fn evaluate(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        gmm_epsilon(&self.spec, x, t, &self.sched)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleParams;
    use proptest::prelude::*;

    fn sched100() -> NoiseSchedule {
        NoiseSchedule::new(ScheduleParams::default_linear(100)).unwrap()
    }

    #[test]
    fn test_spec_validation() {
        assert!(GmmSpec::new(2, vec![]).is_err());
        // weights must sum to one
        let bad = GmmSpec::new(
            1,
            vec![GmmComponent {
                weight: 0.5,
                mean: vec![0.0],
                variance: 1.0,
            }],
        );
        assert!(bad.is_err());
        // dimension mismatch
        let bad = GmmSpec::new(
            2,
            vec![GmmComponent {
                weight: 1.0,
                mean: vec![0.0],
                variance: 1.0,
            }],
        );
        assert!(bad.is_err());
        // non-positive variance
        let bad = GmmSpec::new(
            1,
            vec![GmmComponent {
                weight: 1.0,
                mean: vec![0.0],
                variance: 0.0,
            }],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn test_serde_schema_and_validation_on_load() {
        let spec = GmmSpec::hypercube_corners(2, 0.05);
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.starts_with(r#"{"d":2,"components":[{"w":0.25,"mu":[1.0,1.0],"var":0.05}"#));
        let back: GmmSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        // invalid payloads are rejected at parse time
        let bad = r#"{"d":1,"components":[{"w":0.9,"mu":[0.0],"var":1.0}]}"#;
        assert!(serde_json::from_str::<GmmSpec>(bad).is_err());
    }

    #[test]
    fn test_unit_gaussian_closed_form() {
        let sched = sched100();
        let spec = GmmSpec::unit_gaussian(3);
        for t in [1, 17, 50, 100] {
            let x = [0.3, -1.7, 2.4];
            let eps = gmm_epsilon(&spec, &x, t, &sched).unwrap();
            let scale = (1.0 - sched.alpha_bar(t)).sqrt();
            for (e, xi) in eps.iter().zip(&x) {
                assert!(
                    (e - scale * xi).abs() < 1e-12,
                    "t={t}: got {e}, want {}",
                    scale * xi
                );
            }
        }
    }

    #[test]
    fn test_epsilon_zero_at_noised_mean() {
        let sched = sched100();
        let spec = GmmSpec::new(
            2,
            vec![GmmComponent {
                weight: 1.0,
                mean: vec![1.5, -0.25],
                variance: 0.37,
            }],
        )
        .unwrap();
        let t = 40;
        let sqrt_a = sched.alpha_bar(t).sqrt();
        let x: Vec<f64> = spec.components[0].mean.iter().map(|m| sqrt_a * m).collect();
        let eps = gmm_epsilon(&spec, &x, t, &sched).unwrap();
        for e in eps {
            assert!(e.abs() < 1e-12, "epsilon should vanish at the noised mean");
        }
    }

    #[test]
    fn test_t_zero_is_domain_error() {
        let sched = sched100();
        let spec = GmmSpec::unit_gaussian(1);
        assert!(gmm_epsilon(&spec, &[0.5], 0, &sched).is_err());
        assert!(gmm_posterior_mean(&spec, &[0.5], 0, &sched).is_err());
    }

    #[test]
    fn test_peaked_responsibilities_do_not_underflow() {
        // Components far apart and a query near one of them: the raw
        // densities underflow but the log-space ratios must not.
        let sched = sched100();
        let spec = GmmSpec::new(
            1,
            vec![
                GmmComponent {
                    weight: 0.5,
                    mean: vec![-60.0],
                    variance: 1e-4,
                },
                GmmComponent {
                    weight: 0.5,
                    mean: vec![60.0],
                    variance: 1e-4,
                },
            ],
        )
        .unwrap();
        let t = 1;
        let sqrt_a = sched.alpha_bar(t).sqrt();
        let mean = gmm_posterior_mean(&spec, &[sqrt_a * 60.0], t, &sched).unwrap();
        assert!((mean[0] - 60.0).abs() < 1e-6);
    }

    #[test]
    fn test_batch_evaluate_matches_elementwise_bitwise() {
        let sched = sched100();
        let predictor = GmmPredictor::new(GmmSpec::hypercube_corners(4, 0.05), sched);
        let states: Vec<(Vec<f64>, usize)> = (0..5)
            .map(|i| {
                let s = crate::latent::LatentState::standard_normal(4, 0, i);
                (s.x, 10 + 7 * i as usize)
            })
            .collect();
        let queries: Vec<(&[f64], usize)> =
            states.iter().map(|(x, t)| (x.as_slice(), *t)).collect();
        let batched = predictor.evaluate_batch(&queries).unwrap();
        for ((x, t), b) in states.iter().zip(&batched) {
            assert_eq!(&predictor.evaluate(x, *t).unwrap(), b);
        }
    }

    proptest! {
        /// Shifting every mean by v and the query by sqrt(ᾱ_t)·v leaves the
        /// noise prediction unchanged.
        #[test]
        fn prop_translation_equivariance(
            shift in proptest::collection::vec(-3.0f64..3.0, 2),
            query in proptest::collection::vec(-2.0f64..2.0, 2),
            t in 1usize..=100,
        ) {
            let sched = sched100();
            let spec = GmmSpec::hypercube_corners(2, 0.1);
            let shifted = GmmSpec::new(
                2,
                spec.components
                    .iter()
                    .map(|c| GmmComponent {
                        weight: c.weight,
                        mean: c.mean.iter().zip(&shift).map(|(m, v)| m + v).collect(),
                        variance: c.variance,
                    })
                    .collect(),
            )
            .unwrap();
            let sqrt_a = sched.alpha_bar(t).sqrt();
            let moved: Vec<f64> = query.iter().zip(&shift).map(|(q, v)| q + sqrt_a * v).collect();
            let base = gmm_epsilon(&spec, &query, t, &sched).unwrap();
            let trans = gmm_epsilon(&shifted, &moved, t, &sched).unwrap();
            for (a, b) in base.iter().zip(&trans) {
                prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }

        /// A single-component predictor is affine: ε̂(x) − ε̂(0) is linear.
        #[test]
        fn prop_single_component_affinity(
            mean in proptest::collection::vec(-2.0f64..2.0, 3),
            variance in 0.01f64..4.0,
            x1 in proptest::collection::vec(-3.0f64..3.0, 3),
            x2 in proptest::collection::vec(-3.0f64..3.0, 3),
            t in 1usize..=100,
        ) {
            let sched = sched100();
            let spec = GmmSpec::new(3, vec![GmmComponent { weight: 1.0, mean, variance }]).unwrap();
            let at = |x: &[f64]| gmm_epsilon(&spec, x, t, &sched).unwrap();
            let zero = at(&[0.0, 0.0, 0.0]);
            let sum: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a + b).collect();
            let lhs = at(&sum);
            let e1 = at(&x1);
            let e2 = at(&x2);
            for k in 0..3 {
                let want = (e1[k] - zero[k]) + (e2[k] - zero[k]) + zero[k];
                prop_assert!((lhs[k] - want).abs() < 1e-9, "{} vs {want}", lhs[k]);
            }
        }
    }
}
