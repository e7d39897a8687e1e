//! Deterministic denoising updates: one shared iteration used by draft
//! sampling, target sampling, and the plain fixed-stride baselines.
//!
//! The update moves a latent from timestep t to t − n given a noise
//! prediction ε̂:
//!
//! ```text
//! x_{t−n} = sqrt(ᾱ_{t−n}) · (x_t − sqrt(1 − ᾱ_t) · ε̂) / sqrt(ᾱ_t)
//!         + sqrt(1 − ᾱ_{t−n}) · ε̂
//! ```
//!
//! With ε̂(x, t) = sqrt(1 − ᾱ_t) · x (the unit-Gaussian analytic predictor)
//! this collapses to a scalar multiplier per step,
//! `c(t, s) = sqrt(ᾱ_s ᾱ_t) + sqrt((1 − ᾱ_s)(1 − ᾱ_t))`, which the test
//! suite uses as a closed-form trajectory oracle.

use crate::error::{DtsError, Result};
use crate::latent::{ensure_finite, EpsilonPredictor, LatentState};
use crate::ledger::{NfeLedger, Stage};
use crate::schedule::NoiseSchedule;

/// Apply the deterministic update to `x` at timestep `t`, landing at
/// `t_next`, given the predicted noise. Pure arithmetic; the caller accounts
/// for the evaluation that produced `eps_hat`.
pub fn ddim_update(
    x: &[f64],
    eps_hat: &[f64],
    t: usize,
    t_next: usize,
    sched: &NoiseSchedule,
) -> Vec<f64> {
    debug_assert!(t_next < t && t <= sched.t_max());
    let a_t = sched.alpha_bar(t);
    let a_next = sched.alpha_bar(t_next);
    // Grouped so that an equal-ᾱ step is the exact identity on x.
    let scale = (a_next / a_t).sqrt();
    let noise_coef = (1.0 - a_next).sqrt() - scale * (1.0 - a_t).sqrt();
    x.iter()
        .zip(eps_hat)
        .map(|(xi, ei)| scale * xi + noise_coef * ei)
        .collect()
}

/// One denoising step of the given stride. Consumes exactly one predictor
/// evaluation, recorded in `ledger` under `stage`.
pub fn ddim_step(
    state: &LatentState,
    stride: usize,
    eps: &dyn EpsilonPredictor,
    sched: &NoiseSchedule,
    ledger: &mut NfeLedger,
    stage: Stage,
) -> Result<LatentState> {
    if stride == 0 {
        return Err(DtsError::Config("stride must be at least 1".into()));
    }
    if stride > state.t {
        return Err(DtsError::StepOvershoot {
            stride,
            t: state.t,
        });
    }
    let eps_hat = eps.evaluate(&state.x, state.t)?;
    ledger.record_pass(stage, 1);
    ensure_finite(&eps_hat, "predictor output")?;
    let x = ddim_update(&state.x, &eps_hat, state.t, state.t - stride, sched);
    Ok(LatentState {
        x,
        t: state.t - stride,
    })
}

/// Run the full fixed-stride trajectory {x_T, x_{T−step}, …, x_0}.
/// Consumes exactly T / step evaluations.
pub fn ddim_sample(
    x_init: &LatentState,
    step: usize,
    eps: &dyn EpsilonPredictor,
    sched: &NoiseSchedule,
    ledger: &mut NfeLedger,
    stage: Stage,
) -> Result<Vec<LatentState>> {
    let t_max = sched.t_max();
    if x_init.t != t_max {
        return Err(DtsError::Config(format!(
            "trajectory must start at t = T = {t_max}, got {}",
            x_init.t
        )));
    }
    if step == 0 || t_max % step != 0 {
        return Err(DtsError::Config(format!(
            "stride {step} does not divide T = {t_max}"
        )));
    }
    let mut trajectory = Vec::with_capacity(t_max / step + 1);
    trajectory.push(x_init.clone());
    let mut state = x_init.clone();
    while state.t > 0 {
        state = ddim_step(&state, step, eps, sched, ledger, stage)?;
        trajectory.push(state.clone());
    }
    Ok(trajectory)
}

/// The per-step trajectory multiplier under the unit-Gaussian predictor.
pub fn unit_gaussian_step_multiplier(sched: &NoiseSchedule, t: usize, t_next: usize) -> f64 {
    let a_t = sched.alpha_bar(t);
    let a_s = sched.alpha_bar(t_next);
    (a_s * a_t).sqrt() + ((1.0 - a_s) * (1.0 - a_t)).sqrt()
}
