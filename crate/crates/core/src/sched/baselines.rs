//! Comparison policies: throughput-first FCFS, shortest predicted job, and
//! FCFS with up-front TTFT rejection. None of them differentiates TPOT.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{fcfs_cmp, reject_unattainable, Policy, RunningEntry, SchedulerState, StepPlan};
use crate::costmodel::PrefillCoeffs;
use crate::error::{invalid, Result};
use crate::predictor::LengthPredictor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    GreedyFcfs,
    ShortestPredictedJob,
    EarlyReject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub policy: BaselineKind,
    pub max_batch_size: usize,
    /// When set, a step that admits anything runs prefill only.
    pub prefill_priority: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { policy: BaselineKind::GreedyFcfs, max_batch_size: 256, prefill_priority: true }
    }
}

pub struct BaselinePolicy {
    cfg: BaselineConfig,
    prefill: PrefillCoeffs<f64>,
    predictor: LengthPredictor,
    predictions: HashMap<u64, u32>,
}

impl BaselinePolicy {
    pub fn new(cfg: BaselineConfig, prefill: PrefillCoeffs<f64>, predictor: LengthPredictor) -> Result<Self> {
        if cfg.max_batch_size == 0 {
            return Err(invalid("max_batch_size must be >= 1"));
        }
        prefill.validate()?;
        predictor.validate()?;
        Ok(BaselinePolicy { cfg, prefill, predictor, predictions: HashMap::new() })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.cfg
    }
}

impl Policy for BaselinePolicy {
    fn name(&self) -> &str {
        match self.cfg.policy {
            BaselineKind::GreedyFcfs => "greedy",
            BaselineKind::ShortestPredictedJob => "sjf",
            BaselineKind::EarlyReject => "early_reject",
        }
    }

    fn plan_step(&mut self, state: &mut SchedulerState) -> StepPlan {
        let mut plan = StepPlan::default();

        match self.cfg.policy {
            BaselineKind::GreedyFcfs => state.waiting.sort_by(fcfs_cmp),
            BaselineKind::EarlyReject => {
                state.waiting.sort_by(fcfs_cmp);
                reject_unattainable(state, &self.prefill, &mut plan.rejected);
            }
            BaselineKind::ShortestPredictedJob => {
                let (pred, cache) = (&self.predictor, &mut self.predictions);
                for w in &state.waiting {
                    cache.entry(w.id).or_insert_with(|| pred.predict(w));
                }
                state.waiting.sort_by(|a, b| cache[&a.id].cmp(&cache[&b.id]).then(fcfs_cmp(a, b)));
            }
        }

        let room = self.cfg.max_batch_size.saturating_sub(state.running.len());
        let take = room.min(state.waiting.len());
        for w in state.waiting.drain(..take).collect::<Vec<_>>() {
            let p = self.predictions.remove(&w.id).unwrap_or_else(|| self.predictor.predict(&w));
            plan.admitted.push(w.id);
            state.running.push(RunningEntry::new(w, p));
        }

        if !(self.cfg.prefill_priority && !plan.admitted.is_empty()) {
            plan.decode_batch = state.running.iter().filter(|e| !e.is_prefilling()).map(|e| e.request.id).collect();
        }
        let min_slo = state.running.iter().map(|e| e.request.tpot_slo).fold(f64::INFINITY, f64::min);
        if min_slo.is_finite() {
            plan.min_slo = Some(min_slo);
            plan.vbs = plan.decode_batch.len() as f64;
        }
        plan
    }
}
