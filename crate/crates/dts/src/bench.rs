//! Seed-averaged benchmark grids and baseline comparisons.
//!
//! A [`BenchPlan`] names a mixture, a schedule, a list of seeds and a grid
//! of sampler settings. Every grid cell is run on every seed against the
//! fine small-stride baseline; cells are independent and run in parallel.
//! Aggregates land in a CSV with one row per cell plus a ranked plain-text
//! summary.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{dts_sample, DtsConfig, ThresholdMode};
use crate::error::{DtsError, Result};
use crate::gmm::{GmmPredictor, GmmSpec};
use crate::latent::{l2_distance, LatentState};
use crate::ledger::CostModel;
use crate::report::{config_hash, run_ddim_baseline, Provenance, RunConfigEcho};
use crate::schedule::{NoiseSchedule, ScheduleParams};

/// Header of the aggregate ablation CSV.
pub const ABLATION_CSV_HEADER: &str = "config_id,n1,n2,L,pi0,dpi,B,nfe_total,modeled_latency,\
speedup_vs_fine,acceptance_rate,final_error,status";

/// Header of the baseline-comparison CSV.
pub const COMPARE_CSV_HEADER: &str =
    "method,nfe_total,modeled_latency,speedup_vs_finest,final_error_vs_finest";

/// Grid of sampler settings to sweep; the cross product of all lists.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridSpec {
    pub n1: Vec<usize>,
    pub n2: Vec<usize>,
    #[serde(rename = "L")]
    pub chunk_len: Vec<usize>,
    pub pi0: Vec<f64>,
    pub dpi: Vec<f64>,
    #[serde(rename = "B")]
    pub saturation_batch: Vec<usize>,
}

/// A benchmark plan file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchPlan {
    /// Path to a mixture JSON, resolved relative to the plan file unless
    /// overridden on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<String>,
    pub schedule: ScheduleParams,
    pub seeds: Vec<u64>,
    pub grid: GridSpec,
    /// Fixed strides to run as plain baselines.
    #[serde(default)]
    pub baselines: Vec<usize>,
}

/// One point of the expanded grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CellParams {
    pub n1: usize,
    pub n2: usize,
    pub chunk_len: usize,
    pub pi0: f64,
    pub dpi: f64,
    pub saturation_batch: usize,
}

impl CellParams {
    pub fn to_config(&self) -> DtsConfig {
        DtsConfig {
            n1: self.n1,
            n2: self.n2,
            chunk_len: self.chunk_len,
            pi0: self.pi0,
            dpi: self.dpi,
            threshold_mode: ThresholdMode::PerRound,
            strict: false,
        }
    }
}

impl BenchPlan {
    /// Reject the plan before any computation: empty seed or grid lists and
    /// grid combinations violating sampler invariants are all plan errors.
    pub fn validate(&self) -> Result<Vec<CellParams>> {
        if self.seeds.is_empty() {
            return Err(DtsError::Config("plan has no seeds".into()));
        }
        let t_max = self.schedule.t_max();
        for stride in &self.baselines {
            if *stride == 0 || t_max % stride != 0 {
                return Err(DtsError::Config(format!(
                    "baseline stride {stride} does not divide T = {t_max}"
                )));
            }
        }
        let cells = self.expand();
        if cells.is_empty() {
            return Err(DtsError::Config("plan grid is empty".into()));
        }
        for cell in &cells {
            cell.to_config().validate(t_max).map_err(|e| {
                DtsError::Config(format!(
                    "invalid grid combination (n1={}, n2={}, L={}, pi0={}, dpi={}, B={}): {e}",
                    cell.n1, cell.n2, cell.chunk_len, cell.pi0, cell.dpi, cell.saturation_batch
                ))
            })?;
            if cell.saturation_batch == 0 {
                return Err(DtsError::Config("saturation batch must be at least 1".into()));
            }
        }
        Ok(cells)
    }

    fn expand(&self) -> Vec<CellParams> {
        let mut cells = Vec::new();
        for &n1 in &self.grid.n1 {
            for &n2 in &self.grid.n2 {
                for &chunk_len in &self.grid.chunk_len {
                    for &pi0 in &self.grid.pi0 {
                        for &dpi in &self.grid.dpi {
                            for &saturation_batch in &self.grid.saturation_batch {
                                cells.push(CellParams {
                                    n1,
                                    n2,
                                    chunk_len,
                                    pi0,
                                    dpi,
                                    saturation_batch,
                                });
                            }
                        }
                    }
                }
            }
        }
        cells
    }
}

/// Seed-averaged metrics for one grid cell.
#[derive(Clone, Debug)]
pub struct CellRow {
    pub config_id: String,
    pub params: CellParams,
    pub nfe_total: f64,
    pub modeled_latency: f64,
    pub speedup_vs_fine: f64,
    pub acceptance_rate: f64,
    pub final_error: f64,
    pub failed: bool,
}

impl CellRow {
    fn csv_line(&self) -> String {
        let p = &self.params;
        if self.failed {
            format!(
                "{},{},{},{},{},{},{},,,,,,failed",
                self.config_id, p.n1, p.n2, p.chunk_len, p.pi0, p.dpi, p.saturation_batch
            )
        } else {
            format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},ok",
                self.config_id,
                p.n1,
                p.n2,
                p.chunk_len,
                p.pi0,
                p.dpi,
                p.saturation_batch,
                self.nfe_total,
                self.modeled_latency,
                self.speedup_vs_fine,
                self.acceptance_rate,
                self.final_error
            )
        }
    }
}

/// Outcome of a whole grid run.
#[derive(Clone, Debug)]
pub struct AblationOutcome {
    pub rows: Vec<CellRow>,
    pub failed_cells: usize,
}

fn provenance_for(sched: &NoiseSchedule, spec: &GmmSpec) -> Provenance {
    Provenance {
        schedule: sched.params().clone(),
        mixture_id: spec.id(),
        d: spec.d,
    }
}

/// Fine-baseline final states and latencies, one per (stride, seed).
fn fine_references(
    sched: &NoiseSchedule,
    predictor: &GmmPredictor,
    strides: &[usize],
    seeds: &[u64],
) -> Result<std::collections::HashMap<(usize, u64), (LatentState, f64)>> {
    let spec = predictor.spec().clone();
    let cost = CostModel::new(1)?;
    let mut refs = std::collections::HashMap::new();
    for &stride in strides {
        for &seed in seeds {
            let x = LatentState::standard_normal(spec.d, sched.t_max(), seed);
            let (traj, report) = run_ddim_baseline(
                &x,
                stride,
                predictor,
                sched,
                &cost,
                provenance_for(sched, &spec),
            )?;
            refs.insert(
                (stride, seed),
                (traj.last().unwrap().clone(), report.modeled_latency),
            );
        }
    }
    Ok(refs)
}

/// Execute the full grid × seeds. Individual cell failures are recorded,
/// not fatal.
pub fn run_ablation(plan: &BenchPlan, spec: &GmmSpec, out_dir: &Path) -> Result<AblationOutcome> {
    let cells = plan.validate()?;
    let sched = NoiseSchedule::new(plan.schedule.clone())?;
    let predictor = GmmPredictor::new(spec.clone(), sched.clone());

    let mut fine_strides: Vec<usize> = cells.iter().map(|c| c.n2).collect();
    fine_strides.sort_unstable();
    fine_strides.dedup();
    let references = fine_references(&sched, &predictor, &fine_strides, &plan.seeds)?;

    let rows: Vec<CellRow> = cells
        .par_iter()
        .map(|cell| run_cell(cell, plan, &sched, &predictor, &references))
        .collect();

    let failed_cells = rows.iter().filter(|r| r.failed).count();
    fs::create_dir_all(out_dir)?;
    write_ablation_csv(&out_dir.join("ablation.csv"), &rows)?;
    write_ranked_summary(&out_dir.join("summary.txt"), &rows)?;
    Ok(AblationOutcome { rows, failed_cells })
}

fn run_cell(
    cell: &CellParams,
    plan: &BenchPlan,
    sched: &NoiseSchedule,
    predictor: &GmmPredictor,
    references: &std::collections::HashMap<(usize, u64), (LatentState, f64)>,
) -> CellRow {
    let spec = predictor.spec();
    let cfg = cell.to_config();
    let provenance = provenance_for(sched, spec);
    let config_id = config_hash(
        &RunConfigEcho::Dts { dts: cfg.clone() },
        &provenance,
        cell.saturation_batch,
    );
    let cost = match CostModel::new(cell.saturation_batch) {
        Ok(c) => c,
        Err(_) => {
            return CellRow {
                config_id,
                params: cell.clone(),
                nfe_total: 0.0,
                modeled_latency: 0.0,
                speedup_vs_fine: 0.0,
                acceptance_rate: 0.0,
                final_error: 0.0,
                failed: true,
            }
        }
    };

    let mut nfe = 0.0;
    let mut latency = 0.0;
    let mut speedup = 0.0;
    let mut acceptance = 0.0;
    let mut error = 0.0;
    let mut failed = false;
    for &seed in &plan.seeds {
        let x = LatentState::standard_normal(spec.d, sched.t_max(), seed);
        let (fine_final, fine_latency) = &references[&(cell.n2, seed)];
        match dts_sample(&x, &cfg, predictor, sched, &cost, provenance.clone()) {
            Ok(run) => {
                nfe += run.report.ledger.total_evals() as f64;
                latency += run.report.modeled_latency;
                speedup += fine_latency / run.report.modeled_latency;
                acceptance += run.report.acceptance_rate;
                error += l2_distance(&run.final_state.x, &fine_final.x).unwrap_or(f64::MAX);
            }
            Err(e) => {
                log::warn!("cell {config_id} failed on seed {seed}: {e}");
                failed = true;
                break;
            }
        }
    }
    let n = plan.seeds.len() as f64;
    CellRow {
        config_id,
        params: cell.clone(),
        nfe_total: nfe / n,
        modeled_latency: latency / n,
        speedup_vs_fine: speedup / n,
        acceptance_rate: acceptance / n,
        final_error: error / n,
        failed,
    }
}

pub fn write_ablation_csv(path: &Path, rows: &[CellRow]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "{ABLATION_CSV_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.csv_line())?;
    }
    Ok(())
}

fn write_ranked_summary(path: &Path, rows: &[CellRow]) -> Result<()> {
    let mut ranked: Vec<&CellRow> = rows.iter().filter(|r| !r.failed).collect();
    ranked.sort_by(|a, b| b.speedup_vs_fine.total_cmp(&a.speedup_vs_fine));
    let mut out = fs::File::create(path)?;
    writeln!(out, "cells ranked by modeled speedup vs the fine baseline")?;
    for (rank, row) in ranked.iter().enumerate() {
        let p = &row.params;
        writeln!(
            out,
            "{:>3}. {}  n1={} n2={} L={} pi0={} dpi={} B={}  speedup={:.4}x  accept={:.3}  err={:.4}",
            rank + 1,
            row.config_id,
            p.n1,
            p.n2,
            p.chunk_len,
            p.pi0,
            p.dpi,
            p.saturation_batch,
            row.speedup_vs_fine,
            row.acceptance_rate,
            row.final_error
        )?;
    }
    let failures = rows.iter().filter(|r| r.failed).count();
    if failures > 0 {
        writeln!(out, "{failures} cell(s) failed; see ablation.csv")?;
    }
    Ok(())
}

/// One row of the baseline comparison.
#[derive(Clone, Debug)]
pub struct CompareRow {
    pub method: String,
    pub nfe_total: f64,
    pub modeled_latency: f64,
    pub speedup_vs_finest: f64,
    pub final_error_vs_finest: f64,
}

/// Run fixed-stride baselines and one sampler configuration on identical
/// seeds; metrics are averaged over seeds and referenced to the finest
/// baseline stride.
pub fn run_compare(
    cfg: &DtsConfig,
    spec: &GmmSpec,
    schedule: &ScheduleParams,
    seeds: &[u64],
    baseline_strides: &[usize],
    saturation_batch: usize,
) -> Result<Vec<CompareRow>> {
    if seeds.is_empty() {
        return Err(DtsError::Config("compare needs at least one seed".into()));
    }
    if baseline_strides.is_empty() {
        return Err(DtsError::Config("compare needs at least one baseline stride".into()));
    }
    let sched = NoiseSchedule::new(schedule.clone())?;
    let t_max = sched.t_max();
    for stride in baseline_strides {
        if *stride == 0 || t_max % stride != 0 {
            return Err(DtsError::Config(format!(
                "baseline stride {stride} does not divide T = {t_max}"
            )));
        }
    }
    cfg.validate(t_max)?;
    let predictor = GmmPredictor::new(spec.clone(), sched.clone());
    let provenance = provenance_for(&sched, spec);
    let cost = CostModel::new(saturation_batch)?;
    let finest = *baseline_strides.iter().min().unwrap();

    let finest_refs: Vec<(LatentState, f64)> = seeds
        .iter()
        .map(|&seed| {
            let x = LatentState::standard_normal(spec.d, t_max, seed);
            let (traj, report) =
                run_ddim_baseline(&x, finest, &predictor, &sched, &cost, provenance.clone())?;
            Ok((traj.last().unwrap().clone(), report.modeled_latency))
        })
        .collect::<Result<_>>()?;

    let n = seeds.len() as f64;
    let mut rows = Vec::new();
    for &stride in baseline_strides {
        let mut nfe = 0.0;
        let mut latency = 0.0;
        let mut speedup = 0.0;
        let mut error = 0.0;
        for (i, &seed) in seeds.iter().enumerate() {
            let x = LatentState::standard_normal(spec.d, t_max, seed);
            let (traj, report) =
                run_ddim_baseline(&x, stride, &predictor, &sched, &cost, provenance.clone())?;
            let (fine_final, fine_latency) = &finest_refs[i];
            nfe += report.ledger.total_evals() as f64;
            latency += report.modeled_latency;
            speedup += fine_latency / report.modeled_latency;
            error += l2_distance(&traj.last().unwrap().x, &fine_final.x)?;
        }
        rows.push(CompareRow {
            method: format!("ddim-{stride}"),
            nfe_total: nfe / n,
            modeled_latency: latency / n,
            speedup_vs_finest: speedup / n,
            final_error_vs_finest: error / n,
        });
    }

    let mut nfe = 0.0;
    let mut latency = 0.0;
    let mut speedup = 0.0;
    let mut error = 0.0;
    for (i, &seed) in seeds.iter().enumerate() {
        let x = LatentState::standard_normal(spec.d, t_max, seed);
        let run = dts_sample(&x, cfg, &predictor, &sched, &cost, provenance.clone())?;
        let (fine_final, fine_latency) = &finest_refs[i];
        nfe += run.report.ledger.total_evals() as f64;
        latency += run.report.modeled_latency;
        speedup += fine_latency / run.report.modeled_latency;
        error += l2_distance(&run.final_state.x, &fine_final.x)?;
    }
    rows.push(CompareRow {
        method: "dts".into(),
        nfe_total: nfe / n,
        modeled_latency: latency / n,
        speedup_vs_finest: speedup / n,
        final_error_vs_finest: error / n,
    });

    Ok(rows)
}

pub fn write_compare_csv(path: &Path, rows: &[CompareRow]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "{COMPARE_CSV_HEADER}")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            row.method,
            row.nfe_total,
            row.modeled_latency,
            row.speedup_vs_finest,
            row.final_error_vs_finest
        )?;
    }
    Ok(())
}
