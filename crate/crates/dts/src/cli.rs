//! Command-line front end: `dts sample | ablate | compare | oracle-check`.
//!
//! Exit codes: 0 success, 1 completed with failed grid cells, 2 invalid
//! configuration or input files, 3 numeric failure mid-run. Log verbosity
//! comes from the `DTS_LOG_LEVEL` environment variable (error, info, debug).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::artifacts::{write_run_dir, REPORT_FILE};
use crate::bench::{run_ablation, run_compare, write_compare_csv, BenchPlan};
use crate::engine::{dts_sample, DtsConfig, ThresholdMode};
use crate::error::{DtsError, Result};
use crate::gmm::{gmm_posterior_mean, GmmPredictor, GmmSpec};
use crate::latent::{l2_distance, LatentState};
use crate::ledger::{CostModel, NfeLedger, Stage};
use crate::mc_oracle::mc_posterior_oracle;
use crate::report::{modeled_speedup, run_ddim_baseline, Provenance};
use crate::schedule::{NoiseSchedule, ScheduleParams};

/// A sampling run configuration file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    /// Latent dimension; must match the mixture. Thresholds are raw L2
    /// distances, so they only make sense for a stated dimension.
    pub d: usize,
    pub schedule: ScheduleParams,
    pub dts: DtsConfig,
    #[serde(default = "default_saturation")]
    pub saturation_batch: usize,
}

fn default_saturation() -> usize {
    CostModel::DEFAULT_SATURATION_BATCH
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        config.dts.validate(config.schedule.t_max())?;
        if config.saturation_batch == 0 {
            return Err(DtsError::Config("saturation batch must be at least 1".into()));
        }
        Ok(config)
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ThresholdModeArg {
    PerRound,
    PerPosition,
}

impl From<ThresholdModeArg> for ThresholdMode {
    fn from(arg: ThresholdModeArg) -> Self {
        match arg {
            ThresholdModeArg::PerRound => ThresholdMode::PerRound,
            ThresholdModeArg::PerPosition => ThresholdMode::PerPosition,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "dts",
    about = "Draft-and-target sampling for deterministic denoising diffusion",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one sampling run plus its fine baseline and write artifacts.
    Sample {
        /// Run configuration JSON.
        #[arg(long)]
        config: PathBuf,
        /// Mixture JSON; defaults to the built-in four-corner task.
        #[arg(long)]
        mixture: Option<PathBuf>,
        /// Seed for the initial Gaussian latent.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long, default_value = "dts-out")]
        out: PathBuf,
        /// Override the cost model's saturation batch size.
        #[arg(long)]
        saturation_batch: Option<usize>,
        /// Override the threshold schedule interpretation.
        #[arg(long, value_enum)]
        threshold_mode: Option<ThresholdModeArg>,
        /// Accept only exact draft/target matches.
        #[arg(long)]
        strict: bool,
    },
    /// Run a benchmark plan's whole grid and aggregate per-cell metrics.
    Ablate {
        /// Benchmark plan JSON.
        #[arg(long)]
        plan: PathBuf,
        /// Mixture JSON; overrides the plan's mixture path.
        #[arg(long)]
        mixture: Option<PathBuf>,
        /// Output directory.
        #[arg(long, default_value = "dts-out")]
        out: PathBuf,
    },
    /// Compare fixed-stride baselines against one sampler configuration.
    Compare {
        /// Run configuration JSON.
        #[arg(long)]
        config: PathBuf,
        /// Mixture JSON; defaults to the built-in four-corner task.
        #[arg(long)]
        mixture: Option<PathBuf>,
        /// Comma-separated baseline strides, e.g. 1,2,10.
        #[arg(long, value_delimiter = ',', required = true)]
        baselines: Vec<usize>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// Output directory.
        #[arg(long, default_value = "dts-out")]
        out: PathBuf,
    },
    /// Cross-check the analytic denoiser and the trajectory closed form.
    OracleCheck {
        /// Monte-Carlo samples per posterior check.
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        /// Base seed for the Monte-Carlo draws.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code_for(err: &DtsError) -> u8 {
    match err {
        DtsError::Config(_) | DtsError::Json(_) | DtsError::Io(_) => 2,
        DtsError::Numeric(_)
        | DtsError::StepOvershoot { .. }
        | DtsError::DimensionMismatch { .. }
        | DtsError::Comparison(_) => 3,
    }
}

/// Parse arguments, dispatch, and map errors to exit codes.
pub fn run() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new()
            .filter("DTS_LOG_LEVEL")
            .default_filter_or("error"),
    )
    .init();

    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Sample {
            config,
            mixture,
            seed,
            out,
            saturation_batch,
            threshold_mode,
            strict,
        } => cmd_sample(
            &config,
            mixture.as_deref(),
            seed,
            &out,
            saturation_batch,
            threshold_mode,
            strict,
        ),
        Command::Ablate { plan, mixture, out } => cmd_ablate(&plan, mixture.as_deref(), &out),
        Command::Compare {
            config,
            mixture,
            baselines,
            seeds,
            out,
        } => cmd_compare(&config, mixture.as_deref(), &baselines, &seeds, &out),
        Command::OracleCheck { samples, seed } => cmd_oracle_check(samples, seed),
    }
}

fn load_mixture(path: Option<&Path>, d: usize) -> Result<GmmSpec> {
    let spec = match path {
        Some(path) => serde_json::from_str::<GmmSpec>(&fs::read_to_string(path)?)?,
        None => GmmSpec::hypercube_corners(d, 0.05),
    };
    if spec.d != d {
        return Err(DtsError::Config(format!(
            "mixture dimension {} does not match configured d = {d}",
            spec.d
        )));
    }
    Ok(spec)
}

fn cmd_sample(
    config_path: &Path,
    mixture_path: Option<&Path>,
    seed: u64,
    out: &Path,
    saturation_batch: Option<usize>,
    threshold_mode: Option<ThresholdModeArg>,
    strict: bool,
) -> Result<ExitCode> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(batch) = saturation_batch {
        config.saturation_batch = batch;
    }
    if let Some(mode) = threshold_mode {
        config.dts.threshold_mode = mode.into();
    }
    if strict {
        config.dts.strict = true;
    }
    config.dts.validate(config.schedule.t_max())?;

    let spec = load_mixture(mixture_path, config.d)?;
    let sched = NoiseSchedule::new(config.schedule.clone())?;
    let predictor = GmmPredictor::new(spec.clone(), sched.clone());
    let cost = CostModel::new(config.saturation_batch)?;
    let provenance = Provenance {
        schedule: sched.params().clone(),
        mixture_id: spec.id(),
        d: spec.d,
    };

    let x_init = LatentState::standard_normal(spec.d, sched.t_max(), seed);
    let mut run = dts_sample(&x_init, &config.dts, &predictor, &sched, &cost, provenance.clone())?;
    let (reference, fine_report) = run_ddim_baseline(
        &x_init,
        config.dts.n2,
        &predictor,
        &sched,
        &cost,
        provenance,
    )?;
    let reference_final = reference.last().expect("non-empty trajectory");
    let final_error = l2_distance(&run.final_state.x, &reference_final.x)?;
    run.report.final_error_to_reference = Some(final_error);

    write_run_dir(out, &run.report, &run.trajectory, &reference)?;
    log::info!(
        "sample finished in {:.3}s wall clock",
        run.report.wall_clock_seconds
    );

    println!("run      : {}", run.report.config_hash);
    println!("rounds   : {}", run.report.rounds);
    println!(
        "accepted : {}/{} tokens ({:.3})",
        run.report.accepted_tokens, run.report.drafted_tokens, run.report.acceptance_rate
    );
    println!(
        "nfe      : {} draft + {} target",
        run.report.ledger.draft_evals(),
        run.report.ledger.target_evals()
    );
    println!(
        "latency  : {} units (fine baseline {})",
        run.report.modeled_latency, fine_report.modeled_latency
    );
    println!(
        "speedup  : {:.4}x vs ddim-{}",
        modeled_speedup(&run.report, &fine_report)?,
        config.dts.n2
    );
    println!("error    : {final_error:.6e} vs fine reference");
    println!("artifacts: {}", out.join(REPORT_FILE).display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_ablate(plan_path: &Path, mixture_path: Option<&Path>, out: &Path) -> Result<ExitCode> {
    let plan: BenchPlan = serde_json::from_str(&fs::read_to_string(plan_path)?)?;
    plan.validate()?;

    // The mixture named by the plan resolves relative to the plan file.
    let resolved;
    let mixture_path = match (mixture_path, &plan.mixture) {
        (Some(path), _) => Some(path),
        (None, Some(rel)) => {
            let base = plan_path.parent().unwrap_or_else(|| Path::new("."));
            resolved = base.join(rel);
            Some(resolved.as_path())
        }
        (None, None) => None,
    };
    let spec = match mixture_path {
        Some(path) => serde_json::from_str::<GmmSpec>(&fs::read_to_string(path)?)?,
        None => {
            return Err(DtsError::Config(
                "plan names no mixture and none was given with --mixture".into(),
            ))
        }
    };

    let outcome = run_ablation(&plan, &spec, out)?;
    let ok = outcome.rows.len() - outcome.failed_cells;
    println!(
        "{} cells completed, {} failed; artifacts in {}",
        ok,
        outcome.failed_cells,
        out.display()
    );
    for line in fs::read_to_string(out.join("summary.txt"))?.lines().take(6) {
        println!("{line}");
    }
    if outcome.failed_cells > 0 {
        Ok(ExitCode::from(1))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

fn cmd_compare(
    config_path: &Path,
    mixture_path: Option<&Path>,
    baselines: &[usize],
    seeds: &[u64],
    out: &Path,
) -> Result<ExitCode> {
    let config = RunConfig::load(config_path)?;
    let spec = load_mixture(mixture_path, config.d)?;
    let rows = run_compare(
        &config.dts,
        &spec,
        &config.schedule,
        seeds,
        baselines,
        config.saturation_batch,
    )?;
    fs::create_dir_all(out)?;
    let csv_path = out.join("compare.csv");
    write_compare_csv(&csv_path, &rows)?;
    println!(
        "{:<10} {:>10} {:>16} {:>18} {:>22}",
        "method", "nfe", "modeled_latency", "speedup_vs_finest", "final_error_vs_finest"
    );
    for row in &rows {
        println!(
            "{:<10} {:>10.1} {:>16.2} {:>17.4}x {:>22.6e}",
            row.method,
            row.nfe_total,
            row.modeled_latency,
            row.speedup_vs_finest,
            row.final_error_vs_finest
        );
    }
    println!("csv: {}", csv_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_oracle_check(samples: usize, seed: u64) -> Result<ExitCode> {
    let sched = NoiseSchedule::new(ScheduleParams::default_linear(100))?;
    let mut all_ok = true;

    // Closed-form posterior vs Monte-Carlo, on the corner task and a skewed
    // two-component mixture.
    let cases: Vec<(GmmSpec, Vec<f64>, usize)> = vec![
        (GmmSpec::hypercube_corners(2, 0.05), vec![0.4, -0.3], 50),
        (GmmSpec::hypercube_corners(2, 0.05), vec![-1.1, 0.9], 20),
        (GmmSpec::unit_gaussian(3), vec![0.5, -2.0, 1.0], 75),
        (
            GmmSpec::new(
                1,
                vec![
                    crate::gmm::GmmComponent {
                        weight: 0.5,
                        mean: vec![-2.0],
                        variance: 0.1,
                    },
                    crate::gmm::GmmComponent {
                        weight: 0.5,
                        mean: vec![2.0],
                        variance: 0.1,
                    },
                ],
            )?,
            vec![0.7],
            50,
        ),
    ];
    for (i, (spec, x, t)) in cases.iter().enumerate() {
        let exact = gmm_posterior_mean(spec, x, *t, &sched)?;
        let estimate = mc_posterior_oracle(spec, x, *t, &sched, samples, seed + i as u64)?;
        let ok = exact
            .iter()
            .zip(&estimate.estimate)
            .zip(&estimate.stderr)
            .all(|((e, m), s)| (e - m).abs() <= 3.0 * s + 1e-12);
        all_ok &= ok;
        println!(
            "[{}] posterior case {i}: closed form within 3 standard errors \
             (ess = {:.0}{})",
            if ok { "PASS" } else { "FAIL" },
            estimate.effective_samples,
            if estimate.unreliable { ", low-ess warning" } else { "" },
        );
    }

    // Unit-Gaussian trajectories against the per-step multiplier product.
    let predictor = GmmPredictor::new(GmmSpec::unit_gaussian(1), sched.clone());
    for stride in [1usize, 2, 5, 10] {
        let x_init = LatentState::new(vec![1.0], 100)?;
        let mut ledger = NfeLedger::new();
        let trajectory = crate::ddim::ddim_sample(
            &x_init,
            stride,
            &predictor,
            &sched,
            &mut ledger,
            Stage::Baseline,
        )?;
        let mut ok = true;
        let mut expected = 1.0;
        for (k, state) in trajectory.iter().skip(1).enumerate() {
            let t = 100 - stride * k;
            expected *= crate::ddim::unit_gaussian_step_multiplier(&sched, t, t - stride);
            ok &= ((state.x[0] - expected) / expected).abs() <= 1e-12;
        }
        all_ok &= ok;
        println!(
            "[{}] multiplier-product trajectory, stride {stride}",
            if ok { "PASS" } else { "FAIL" }
        );
    }

    if all_ok {
        println!("all oracle checks passed");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("oracle checks FAILED");
        Ok(ExitCode::from(1))
    }
}
