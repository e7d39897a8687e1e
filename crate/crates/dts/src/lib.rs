//! Draft-and-target sampling for deterministic denoising diffusion.
//!
//! A single model plays two roles along one denoising trajectory: *draft
//! sampling* takes large strides to produce cheap candidate tokens, and
//! *target sampling* refines every candidate with small strides, executed as
//! batched forward passes. A verification scan accepts the longest prefix
//! whose draft/target L2 distance stays within a progressively relaxed
//! threshold and resumes from the first rejected position's target token.
//! Because batched passes below the compute-saturation batch size are
//! (modeled as) latency-free, accepted drafts translate into real speedup.
//!
//! Everything runs at desk scale against exact Gaussian-mixture denoisers,
//! so every claim is checkable against closed forms:
//!
//! - [`schedule`] — ᾱ_t noise schedules (linear-β and cosine).
//! - [`latent`] — trajectory tokens and the [`latent::EpsilonPredictor`]
//!   interface.
//! - [`ddim`] — the deterministic denoising update and fixed-stride
//!   baselines.
//! - [`gmm`] — exact mixture-posterior noise predictors.
//! - [`mc_oracle`] — seeded Monte-Carlo posterior estimates for checking
//!   [`gmm`].
//! - [`engine`] — the draft / refine / verify / resample loop.
//! - [`ledger`], [`report`] — NFE accounting, the batch-saturation latency
//!   model, and run reports.
//! - [`bench`] — seed-averaged grids and baseline comparisons.
//! - [`artifacts`] — JSON / JSONL / CSV artifact files.
//!
//! ## Runnable examples
//!
//! ```bash
//! cargo run -p dts --example ddim_baseline        # fixed-stride cost/quality sweep
//! cargo run -p dts --example draft_target_run     # one full sampling run, round by round
//! cargo run -p dts --example strict_verification  # exact-match mode degenerations
//! cargo run -p dts --example progressive_thresholds
//! cargo run -p dts --example speedup_model        # batch-saturation latency model
//! cargo run -p dts --example closed_form_oracle   # analytic + Monte-Carlo cross-checks
//! cargo run -p dts --example chunk_ablation       # chunk-length sweep
//! cargo run -p dts --example artifact_files       # on-disk formats end to end
//! ```
//!
//! The `dts` binary wraps the same machinery as `sample`, `compare`,
//! `ablate` and `oracle-check` subcommands; see the README.

pub mod artifacts;
pub mod bench;
pub mod cli;
pub mod ddim;
pub mod engine;
pub mod error;
pub mod gmm;
pub mod latent;
pub mod ledger;
pub mod mc_oracle;
pub mod report;
pub mod schedule;

pub use ddim::{ddim_sample, ddim_step, ddim_update, unit_gaussian_step_multiplier};
pub use engine::{
    draft_chunk, dts_sample, target_refine, verify, DraftChunk, DtsConfig, DtsRun, RoundEvent,
    TargetBatch, ThresholdMode, VerificationOutcome,
};
pub use error::{DtsError, Result};
pub use gmm::{gmm_epsilon, gmm_posterior_mean, GmmComponent, GmmPredictor, GmmSpec};
pub use latent::{l2_distance, EpsilonPredictor, LatentState};
pub use ledger::{CostModel, CountingPredictor, NfeLedger, PassRecord, Stage};
pub use mc_oracle::{mc_posterior_oracle, PosteriorEstimate};
pub use report::{
    config_hash, modeled_speedup, run_ddim_baseline, trajectory_error, Provenance, RunConfigEcho,
    RunReport,
};
pub use schedule::{NoiseSchedule, ScheduleParams};
