//! NFE accounting and the batched-latency cost model.
//!
//! Every predictor forward pass is recorded as `(batch_size, stage)`. The
//! cost model prices a pass at `max(1, batch_size / B)` abstract units, where
//! B is the batch size at which a forward pass saturates compute: passes
//! below B are latency-free to grow, passes above B cost proportionally.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{DtsError, Result};
use crate::latent::EpsilonPredictor;

/// Which sampling role consumed a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Draft,
    Target,
    Baseline,
}

/// One recorded forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassRecord {
    pub batch_size: usize,
    pub stage: Stage,
}

/// Per-run ledger of predictor evaluations, split by stage.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NfeLedger {
    draft_evals: u64,
    target_evals: u64,
    baseline_evals: u64,
    passes: Vec<PassRecord>,
}

impl NfeLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record one forward pass of `batch_size` evaluations for `stage`.
    pub fn record_pass(&mut self, stage: Stage, batch_size: usize) {
        debug_assert!(batch_size > 0);
        match stage {
            Stage::Draft => self.draft_evals += batch_size as u64,
            Stage::Target => self.target_evals += batch_size as u64,
            Stage::Baseline => self.baseline_evals += batch_size as u64,
        }
        self.passes.push(PassRecord { batch_size, stage });
    }

    pub fn draft_evals(&self) -> u64 {
        self.draft_evals
    }

    pub fn target_evals(&self) -> u64 {
        self.target_evals
    }

    pub fn baseline_evals(&self) -> u64 {
        self.baseline_evals
    }

    /// All evaluations regardless of stage.
    pub fn total_evals(&self) -> u64 {
        self.draft_evals + self.target_evals + self.baseline_evals
    }

    /// Every recorded pass, in execution order.
    pub fn passes(&self) -> &[PassRecord] {
        &self.passes
    }
}

/// Flat-then-linear latency model for batched forward passes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    saturation_batch: usize,
}

impl CostModel {
    pub const DEFAULT_SATURATION_BATCH: usize = 16;

    pub fn new(saturation_batch: usize) -> Result<Self> {
        if saturation_batch == 0 {
            return Err(DtsError::Config(
                "saturation batch must be at least 1".into(),
            ));
        }
        Ok(CostModel { saturation_batch })
    }

    pub fn saturation_batch(&self) -> usize {
        self.saturation_batch
    }

    /// Cost of one forward pass: `max(1, batch_size / B)` time units.
    pub fn pass_cost(&self, batch_size: usize) -> f64 {
        (batch_size as f64 / self.saturation_batch as f64).max(1.0)
    }

    /// Modeled latency of a whole run: summed pass costs.
    pub fn latency(&self, ledger: &NfeLedger) -> f64 {
        ledger
            .passes()
            .iter()
            .map(|p| self.pass_cost(p.batch_size))
            .sum()
    }
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            saturation_batch: Self::DEFAULT_SATURATION_BATCH,
        }
    }
}

/// Instrumentation wrapper counting raw predictor calls, independent of the
/// ledger kept by the samplers. Safe under concurrent evaluation.
pub struct CountingPredictor<'a, P: EpsilonPredictor + ?Sized> {
    inner: &'a P,
    calls: AtomicU64,
}

impl<'a, P: EpsilonPredictor + ?Sized> CountingPredictor<'a, P> {
    pub fn new(inner: &'a P) -> Self {
        CountingPredictor {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    /// Number of single evaluations observed (a batch of m counts m).
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<P: EpsilonPredictor + ?Sized> EpsilonPredictor for CountingPredictor<'_, P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn evaluate(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.evaluate(x, t)
    }

    fn evaluate_batch(&self, queries: &[(&[f64], usize)]) -> Result<Vec<Vec<f64>>> {
        self.calls.fetch_add(queries.len() as u64, Ordering::Relaxed);
        self.inner.evaluate_batch(queries)
    }
}
