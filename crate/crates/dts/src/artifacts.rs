//! On-disk artifact formats.
//!
//! A run directory holds:
//!
//! - `report.json` — the [`RunReport`].
//! - `events.jsonl` — one verification-round record per line.
//! - `trajectory.csv` — the committed trajectory, columns `t,x_0,…,x_{d−1}`.
//! - `reference_trajectory.csv` — the fine baseline trajectory.
//!
//! Every file carries the run's config hash (a field in JSON records, a
//! leading `# config_hash=…` comment in CSV), and [`load_run_dir`] refuses
//! directories whose files disagree.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::RoundEvent;
use crate::error::{DtsError, Result};
use crate::latent::LatentState;
use crate::report::RunReport;

pub const REPORT_FILE: &str = "report.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const REFERENCE_TRAJECTORY_FILE: &str = "reference_trajectory.csv";

#[derive(Serialize)]
struct EventLine<'a> {
    #[serde(flatten)]
    event: &'a RoundEvent,
    config_hash: &'a str,
}

#[derive(Deserialize)]
struct OwnedEventLine {
    #[serde(flatten)]
    event: RoundEvent,
    config_hash: String,
}

/// Write the report as pretty JSON.
pub fn write_report_json(path: &Path, report: &RunReport) -> Result<()> {
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    fs::write(path, json)?;
    Ok(())
}

pub fn load_report_json(path: &Path) -> Result<RunReport> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Write one compact JSON record per verification round.
pub fn write_events_jsonl(path: &Path, report: &RunReport) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for event in &report.events {
        let line = serde_json::to_string(&EventLine {
            event,
            config_hash: &report.config_hash,
        })?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Write a trajectory as CSV with a config-hash comment line.
pub fn write_trajectory_csv(path: &Path, states: &[LatentState], config_hash: &str) -> Result<()> {
    let d = states.first().map_or(0, |s| s.dim());
    let mut out = fs::File::create(path)?;
    writeln!(out, "# config_hash={config_hash}")?;
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((0..d).map(|k| format!("x_{k}")))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for state in states {
        let mut row = state.t.to_string();
        for v in &state.x {
            row.push(',');
            row.push_str(&v.to_string());
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}

fn trajectory_hash(path: &Path) -> Result<String> {
    let file = fs::File::open(path)?;
    let mut first = String::new();
    BufReader::new(file).read_line(&mut first)?;
    first
        .trim()
        .strip_prefix("# config_hash=")
        .map(str::to_string)
        .ok_or_else(|| {
            DtsError::Config(format!(
                "{} is missing its config-hash header",
                path.display()
            ))
        })
}

/// Write the full artifact set for one run into `dir`.
pub fn write_run_dir(
    dir: &Path,
    report: &RunReport,
    trajectory: &[LatentState],
    reference: &[LatentState],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_report_json(&dir.join(REPORT_FILE), report)?;
    write_events_jsonl(&dir.join(EVENTS_FILE), report)?;
    write_trajectory_csv(&dir.join(TRAJECTORY_FILE), trajectory, &report.config_hash)?;
    write_trajectory_csv(
        &dir.join(REFERENCE_TRAJECTORY_FILE),
        reference,
        &report.config_hash,
    )?;
    Ok(())
}

/// Load a run directory, verifying that every artifact carries the same
/// config hash as the report.
pub fn load_run_dir(dir: &Path) -> Result<(RunReport, Vec<RoundEvent>)> {
    let report = load_report_json(&dir.join(REPORT_FILE))?;

    let events_path = dir.join(EVENTS_FILE);
    let mut events = Vec::new();
    for line in BufReader::new(fs::File::open(&events_path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: OwnedEventLine = serde_json::from_str(&line)?;
        if record.config_hash != report.config_hash {
            return Err(DtsError::Config(format!(
                "event record hash {} does not match report hash {}",
                record.config_hash, report.config_hash
            )));
        }
        events.push(record.event);
    }

    for csv in [TRAJECTORY_FILE, REFERENCE_TRAJECTORY_FILE] {
        let path = dir.join(csv);
        if path.exists() {
            let hash = trajectory_hash(&path)?;
            if hash != report.config_hash {
                return Err(DtsError::Config(format!(
                    "{csv} hash {hash} does not match report hash {}",
                    report.config_hash
                )));
            }
        }
    }

    Ok((report, events))
}

/// Read a trajectory CSV back into latent states.
pub fn load_trajectory_csv(path: &Path) -> Result<Vec<LatentState>> {
    let content = fs::read_to_string(path)?;
    let mut states = Vec::new();
    for line in content.lines().skip(2) {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let t: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| DtsError::Config(format!("bad trajectory row: {line}")))?;
        let x = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| DtsError::Config(format!("bad trajectory value: {f}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        states.push(LatentState::new(x, t)?);
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{dts_sample, DtsConfig};
    use crate::gmm::{GmmPredictor, GmmSpec};
    use crate::ledger::CostModel;
    use crate::report::Provenance;
    use crate::schedule::{NoiseSchedule, ScheduleParams};

    fn sample_run() -> (crate::engine::DtsRun, Vec<LatentState>) {
        let sched = NoiseSchedule::new(ScheduleParams::default_linear(100)).unwrap();
        let spec = GmmSpec::hypercube_corners(2, 0.05);
        let predictor = GmmPredictor::new(spec.clone(), sched.clone());
        let x = LatentState::standard_normal(2, 100, 5);
        let run = dts_sample(
            &x,
            &DtsConfig::default(),
            &predictor,
            &sched,
            &CostModel::default(),
            Provenance {
                schedule: sched.params().clone(),
                mixture_id: spec.id(),
                d: 2,
            },
        )
        .unwrap();
        let reference = run.trajectory.clone();
        (run, reference)
    }

    #[test]
    fn test_run_dir_round_trip_and_consistency() {
        let dir = tempfile::tempdir().unwrap();
        let (run, reference) = sample_run();
        write_run_dir(dir.path(), &run.report, &run.trajectory, &reference).unwrap();

        let (report, events) = load_run_dir(dir.path()).unwrap();
        assert_eq!(report.config_hash, run.report.config_hash);
        assert_eq!(events, run.report.events);

        let states = load_trajectory_csv(&dir.path().join(TRAJECTORY_FILE)).unwrap();
        assert_eq!(states.len(), run.trajectory.len());
        assert_eq!(states[0].t, 100);
        assert_eq!(states.last().unwrap().t, 0);
    }

    #[test]
    fn test_mismatched_hash_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (run, reference) = sample_run();
        write_run_dir(dir.path(), &run.report, &run.trajectory, &reference).unwrap();
        // Corrupt the trajectory hash.
        write_trajectory_csv(
            &dir.path().join(TRAJECTORY_FILE),
            &run.trajectory,
            "0000000000000000",
        )
        .unwrap();
        assert!(load_run_dir(dir.path()).is_err());
    }
}
