//! The draft-and-target sampling loop.
//!
//! One round works on a chunk of up to L tokens:
//!
//! 1. **Draft**: sequential large-stride (n1) steps produce cheap tokens.
//! 2. **Target**: every chunk position is refined from its predecessor by
//!    n1/n2 small-stride (n2) steps. All positions advance in lockstep, so
//!    the stage runs as n1/n2 batched forward passes of batch size m.
//! 3. **Verify**: positions are scanned in trajectory order and accepted
//!    while the L2 distance between draft and target stays within the
//!    round's threshold. The first rejection ends the prefix; sampling
//!    resumes from that position's *target* token. On a full accept the
//!    chunk's last target token carries forward, so the committed
//!    trajectory is always built from refined tokens.
//!
//! Thresholds grow by Δπ per verification round (or per global token
//! position), trading strict trajectory agreement for fewer resampled
//! rounds. Strict mode accepts only exact matches, which on any nonlinear
//! predictor degenerates to the fine small-stride trajectory.

use serde::{Deserialize, Serialize};

use crate::ddim::{ddim_step, ddim_update};
use crate::error::{DtsError, Result};
use crate::latent::{ensure_finite, l2_distance, EpsilonPredictor, LatentState};
use crate::ledger::{CostModel, NfeLedger, Stage};
use crate::report::{config_hash, Provenance, RunConfigEcho, RunReport};
use crate::schedule::NoiseSchedule;

/// Threshold schedule interpretation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdMode {
    /// One threshold per verification round: π_r = π₀ + r·Δπ.
    #[default]
    #[serde(rename = "per-round")]
    PerRound,
    /// One threshold per global token position: π_g = π₀ + g·Δπ.
    #[serde(rename = "per-position")]
    PerPosition,
}

/// All tunables of the sampling loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DtsConfig {
    /// Draft stride.
    pub n1: usize,
    /// Target stride; divides `n1`.
    pub n2: usize,
    /// Chunk length in tokens.
    #[serde(rename = "L")]
    pub chunk_len: usize,
    /// Initial matching threshold π₀.
    pub pi0: f64,
    /// Threshold increment Δπ.
    pub dpi: f64,
    #[serde(default)]
    pub threshold_mode: ThresholdMode,
    /// Accept only exact matches, ignoring the threshold schedule.
    #[serde(default)]
    pub strict: bool,
}

impl Default for DtsConfig {
    fn default() -> Self {
        DtsConfig {
            n1: 10,
            n2: 2,
            chunk_len: 6,
            pi0: 11.0,
            dpi: 1.5,
            threshold_mode: ThresholdMode::PerRound,
            strict: false,
        }
    }
}

impl DtsConfig {
    /// Check internal consistency and compatibility with a schedule of
    /// maximum timestep `t_max`.
    pub fn validate(&self, t_max: usize) -> Result<()> {
        if self.n1 == 0 || self.n2 == 0 {
            return Err(DtsError::Config("strides must be positive".into()));
        }
        if self.n2 > self.n1 {
            return Err(DtsError::Config(format!(
                "target stride n2 = {} must not exceed draft stride n1 = {}",
                self.n2, self.n1
            )));
        }
        if self.n1 % self.n2 != 0 {
            return Err(DtsError::Config(format!(
                "draft stride n1 = {} must be a multiple of target stride n2 = {}",
                self.n1, self.n2
            )));
        }
        if t_max % self.n1 != 0 {
            return Err(DtsError::Config(format!(
                "n1 = {} must divide T = {t_max}",
                self.n1
            )));
        }
        if self.chunk_len == 0 {
            return Err(DtsError::Config("chunk length must be at least 1".into()));
        }
        if !(self.pi0 >= 0.0 && self.pi0.is_finite() && self.dpi >= 0.0 && self.dpi.is_finite()) {
            return Err(DtsError::Config(format!(
                "thresholds must be finite and non-negative, got pi0 = {}, dpi = {}",
                self.pi0, self.dpi
            )));
        }
        Ok(())
    }

    /// Small-stride steps per token position (n1 / n2).
    pub fn refinements_per_token(&self) -> usize {
        self.n1 / self.n2
    }
}

/// A chunk of sequentially drafted tokens.
#[derive(Clone, Debug)]
pub struct DraftChunk {
    /// State the chunk was drafted from.
    pub seed: LatentState,
    /// Drafted tokens at seed.t − n1, seed.t − 2·n1, …
    pub tokens: Vec<LatentState>,
    /// Running chunk counter within the run.
    pub chunk_index: usize,
}

/// Refined counterparts of a chunk, position-aligned with its tokens.
#[derive(Clone, Debug)]
pub struct TargetBatch {
    pub targets: Vec<LatentState>,
}

/// Result of verifying one chunk against its target batch.
#[derive(Clone, Debug)]
pub struct VerificationOutcome {
    /// Length of the accepted prefix.
    pub accepted_count: usize,
    /// L2 distance at every position.
    pub distances: Vec<f64>,
    /// Threshold applied at every position.
    pub thresholds_used: Vec<f64>,
    /// Where the next round starts: the target token at the first rejected
    /// position, or the last target token when everything was accepted.
    pub resume_state: LatentState,
}

/// One verification round, as logged to the event stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundEvent {
    pub round: usize,
    pub start_t: usize,
    pub chunk_len: usize,
    pub distances: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub accepted: usize,
    pub draft_nfe: u64,
    pub target_nfe: u64,
    pub batched_passes: usize,
}

/// A finished run: the noiseless final state, the committed trajectory on
/// the n1 grid, and the full report.
#[derive(Clone, Debug)]
pub struct DtsRun {
    pub final_state: LatentState,
    /// x_T followed by every committed target token, ending at t = 0.
    pub trajectory: Vec<LatentState>,
    pub report: RunReport,
}

/// Draft up to L tokens from `seed` with sequential stride-n1 steps.
pub fn draft_chunk(
    seed: &LatentState,
    cfg: &DtsConfig,
    eps: &dyn EpsilonPredictor,
    sched: &NoiseSchedule,
    ledger: &mut NfeLedger,
    chunk_index: usize,
) -> Result<DraftChunk> {
    if seed.t < cfg.n1 {
        return Err(DtsError::Config(format!(
            "nothing to draft: seed at t = {} is below one stride n1 = {}",
            seed.t, cfg.n1
        )));
    }
    if seed.t % cfg.n1 != 0 {
        return Err(DtsError::Config(format!(
            "chunk seed timestep {} is not aligned to the n1 = {} grid",
            seed.t, cfg.n1
        )));
    }
    let count = cfg.chunk_len.min(seed.t / cfg.n1);
    let mut tokens = Vec::with_capacity(count);
    let mut state = seed.clone();
    for _ in 0..count {
        state = ddim_step(&state, cfg.n1, eps, sched, ledger, Stage::Draft)?;
        tokens.push(state.clone());
    }
    Ok(DraftChunk {
        seed: seed.clone(),
        tokens,
        chunk_index,
    })
}

/// Refine a chunk: position j restarts from the chunk's previous token
/// (position 0 from the seed) and takes n1/n2 small steps, all positions in
/// lockstep as batched passes.
pub fn target_refine(
    chunk: &DraftChunk,
    cfg: &DtsConfig,
    eps: &dyn EpsilonPredictor,
    sched: &NoiseSchedule,
    ledger: &mut NfeLedger,
) -> Result<TargetBatch> {
    cfg.validate(sched.t_max())?;
    let m = chunk.tokens.len();
    if m == 0 {
        return Err(DtsError::Config("cannot refine an empty chunk".into()));
    }
    let mut lanes: Vec<LatentState> = Vec::with_capacity(m);
    lanes.push(chunk.seed.clone());
    lanes.extend(chunk.tokens[..m - 1].iter().cloned());

    for _ in 0..cfg.refinements_per_token() {
        let queries: Vec<(&[f64], usize)> =
            lanes.iter().map(|s| (s.x.as_slice(), s.t)).collect();
        let predictions = eps.evaluate_batch(&queries)?;
        ledger.record_pass(Stage::Target, m);
        for (lane, eps_hat) in lanes.iter_mut().zip(&predictions) {
            ensure_finite(eps_hat, "predictor output")?;
            lane.x = ddim_update(&lane.x, eps_hat, lane.t, lane.t - cfg.n2, sched);
            lane.t -= cfg.n2;
        }
    }

    for (lane, token) in lanes.iter().zip(&chunk.tokens) {
        debug_assert_eq!(lane.t, token.t, "target landed off its draft position");
    }
    Ok(TargetBatch { targets: lanes })
}

/// Scan a chunk in trajectory order and accept the longest prefix whose
/// draft/target L2 distances stay within threshold.
pub fn verify(
    chunk: &DraftChunk,
    batch: &TargetBatch,
    round: usize,
    cfg: &DtsConfig,
    t_max: usize,
) -> VerificationOutcome {
    let m = chunk.tokens.len();
    assert_eq!(m, batch.targets.len(), "chunk and batch must be aligned");
    assert!(m > 0, "cannot verify an empty chunk");

    let mut distances = Vec::with_capacity(m);
    let mut thresholds = Vec::with_capacity(m);
    for (j, (token, target)) in chunk.tokens.iter().zip(&batch.targets).enumerate() {
        assert_eq!(token.t, target.t, "misaligned timestep at position {j}");
        distances.push(l2_distance(&token.x, &target.x).expect("aligned dimensions"));
        let threshold = if cfg.strict {
            0.0
        } else {
            match cfg.threshold_mode {
                ThresholdMode::PerRound => cfg.pi0 + round as f64 * cfg.dpi,
                ThresholdMode::PerPosition => {
                    // Global 0-based index of this token on the T/n1 grid.
                    let global = (t_max - token.t) / cfg.n1 - 1;
                    cfg.pi0 + global as f64 * cfg.dpi
                }
            }
        };
        thresholds.push(threshold);
    }

    let accepted_count = distances
        .iter()
        .zip(&thresholds)
        .position(|(dist, threshold)| {
            if cfg.strict {
                *dist != 0.0
            } else {
                *dist > *threshold
            }
        })
        .unwrap_or(m);

    let resume_state = if accepted_count < m {
        batch.targets[accepted_count].clone()
    } else {
        batch.targets[m - 1].clone()
    };

    VerificationOutcome {
        accepted_count,
        distances,
        thresholds_used: thresholds,
        resume_state,
    }
}

/// Run the full loop from x_T to t = 0.
pub fn dts_sample(
    x_init: &LatentState,
    cfg: &DtsConfig,
    eps: &dyn EpsilonPredictor,
    sched: &NoiseSchedule,
    cost: &CostModel,
    provenance: Provenance,
) -> Result<DtsRun> {
    let start = std::time::Instant::now();
    let t_max = sched.t_max();
    cfg.validate(t_max)?;
    if x_init.t != t_max {
        return Err(DtsError::Config(format!(
            "run must start at t = T = {t_max}, got {}",
            x_init.t
        )));
    }
    ensure_finite(&x_init.x, "initial state")?;

    let mut ledger = NfeLedger::new();
    let mut events = Vec::new();
    let mut trajectory = vec![x_init.clone()];
    let mut state = x_init.clone();
    let mut round = 0;
    let mut drafted_tokens = 0u64;
    let mut accepted_tokens = 0u64;

    while state.t > 0 {
        let start_t = state.t;
        let chunk = draft_chunk(&state, cfg, eps, sched, &mut ledger, round)?;
        let m = chunk.tokens.len();
        let batch = target_refine(&chunk, cfg, eps, sched, &mut ledger)?;
        let outcome = verify(&chunk, &batch, round, cfg, t_max);

        drafted_tokens += m as u64;
        accepted_tokens += outcome.accepted_count as u64;
        let committed_up_to = outcome.accepted_count.min(m - 1);
        trajectory.extend_from_slice(&batch.targets[..=committed_up_to]);

        events.push(RoundEvent {
            round,
            start_t,
            chunk_len: m,
            distances: outcome.distances.clone(),
            thresholds: outcome.thresholds_used.clone(),
            accepted: outcome.accepted_count,
            draft_nfe: m as u64,
            target_nfe: (m * cfg.refinements_per_token()) as u64,
            batched_passes: cfg.refinements_per_token(),
        });

        // Every round must advance by at least one draft stride and at most
        // a full chunk, or the loop could stall.
        let advanced = start_t - outcome.resume_state.t;
        assert!(
            advanced >= cfg.n1 && advanced <= m * cfg.n1,
            "round advanced by {advanced}, outside [{}, {}]",
            cfg.n1,
            m * cfg.n1
        );

        state = outcome.resume_state;
        round += 1;
    }

    let hash = config_hash(
        &RunConfigEcho::Dts { dts: cfg.clone() },
        &provenance,
        cost.saturation_batch(),
    );
    let report = RunReport {
        config_hash: hash,
        config: RunConfigEcho::Dts { dts: cfg.clone() },
        saturation_batch: cost.saturation_batch(),
        provenance,
        rounds: round,
        drafted_tokens,
        accepted_tokens,
        acceptance_rate: if drafted_tokens == 0 {
            0.0
        } else {
            accepted_tokens as f64 / drafted_tokens as f64
        },
        modeled_latency: cost.latency(&ledger),
        final_error_to_reference: None,
        ledger,
        events,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };

    Ok(DtsRun {
        final_state: state,
        trajectory,
        report,
    })
}
