//! Deadline-ordered TTFT rejection plus TPOT-aware admission and
//! credit-based batching.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{
    credit_step, ldf_cmp, reject_unattainable, AdmissionRecord, Policy, Rejection, RunningEntry, SchedulerState,
    StepPlan,
};
use crate::costmodel::{ItlCoeffs, PrefillCoeffs};
use crate::error::{invalid, Result};
use crate::predictor::LengthPredictor;
use crate::slo::{Request, RequestStatus};

/// Which set the admission bound takes its minimum over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmissionMin {
    /// Running set plus the candidate.
    #[default]
    RPrime,
    /// Running set only (the candidate's own SLO when it is empty).
    ROnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorpioConfig {
    pub ttft_guard: bool,
    pub tpot_guard: bool,
    pub admission_min: AdmissionMin,
    pub max_running: usize,
}

impl Default for ScorpioConfig {
    fn default() -> Self {
        ScorpioConfig { ttft_guard: true, tpot_guard: true, admission_min: AdmissionMin::RPrime, max_running: 256 }
    }
}

pub struct ScorpioPolicy {
    cfg: ScorpioConfig,
    itl: ItlCoeffs<f64>,
    prefill: PrefillCoeffs<f64>,
    predictor: LengthPredictor,
    predictions: HashMap<u64, u32>,
}

/// Running aggregates that make each admission test O(1).
struct Aggregates {
    n: usize,
    min_slo: f64,
    inv_slo_sum: f64,
    len_sum: f64,
}

impl Aggregates {
    fn of(running: &[RunningEntry]) -> Self {
        let mut a = Aggregates { n: 0, min_slo: f64::INFINITY, inv_slo_sum: 0.0, len_sum: 0.0 };
        for e in running {
            a.add(&e.request, e.seq_len());
        }
        a
    }

    fn add(&mut self, r: &Request, seq_len: u64) {
        self.n += 1;
        self.min_slo = self.min_slo.min(r.tpot_slo);
        self.inv_slo_sum += 1.0 / r.tpot_slo;
        self.len_sum += seq_len as f64;
    }
}

impl ScorpioPolicy {
    pub fn new(
        cfg: ScorpioConfig,
        itl: ItlCoeffs<f64>,
        prefill: PrefillCoeffs<f64>,
        predictor: LengthPredictor,
    ) -> Result<Self> {
        if cfg.max_running == 0 {
            return Err(invalid("max_running must be >= 1"));
        }
        itl.validate()?;
        prefill.validate()?;
        predictor.validate()?;
        Ok(ScorpioPolicy { cfg, itl, prefill, predictor, predictions: HashMap::new() })
    }

    pub fn config(&self) -> &ScorpioConfig {
        &self.cfg
    }

    fn predicted(&mut self, r: &Request) -> u32 {
        let p = &self.predictor;
        *self.predictions.entry(r.id).or_insert_with(|| p.predict(r).max(1))
    }

    fn admit_guarded(&mut self, state: &mut SchedulerState, plan: &mut StepPlan) {
        let mut agg = Aggregates::of(&state.running);
        let mut kept = Vec::with_capacity(state.waiting.len());
        let waiting = std::mem::take(&mut state.waiting);
        let mut full = state.running.len() >= self.cfg.max_running;
        for w in waiting {
            if full {
                kept.push(w);
                continue;
            }
            let p = self.predicted(&w);
            let pf = p as f64;
            let prompt = w.prompt_len as f64;
            let solo = self.itl.estimated_tpot_unchecked(1.0, prompt, pf);
            if solo > w.tpot_slo {
                self.predictions.remove(&w.id);
                plan.rejected.push(Rejection {
                    request: w,
                    status: RequestStatus::RejectedAdmission,
                    estimate: Some(solo),
                });
                continue;
            }
            let m_prime = agg.min_slo.min(w.tpot_slo);
            let vbs = m_prime * (agg.inv_slo_sum + 1.0 / w.tpot_slo);
            let avg_len = (agg.len_sum + prompt) / (agg.n + 1) as f64;
            let est = self.itl.estimated_tpot_unchecked(vbs, avg_len, pf);
            let bound = match self.cfg.admission_min {
                AdmissionMin::RPrime => m_prime,
                AdmissionMin::ROnly if agg.n == 0 => w.tpot_slo,
                AdmissionMin::ROnly => agg.min_slo,
            };
            if est <= bound {
                let mut members: Vec<(f64, u64)> =
                    state.running.iter().map(|e| (e.request.tpot_slo, e.seq_len())).collect();
                members.push((w.tpot_slo, w.prompt_len as u64));
                plan.admissions.push(AdmissionRecord {
                    id: w.id,
                    predicted_len: p,
                    members,
                    estimate_s: est,
                    bound_s: bound,
                });
                agg.add(&w, w.prompt_len as u64);
                plan.admitted.push(w.id);
                self.predictions.remove(&w.id);
                state.running.push(RunningEntry::new(w, p));
                full = state.running.len() >= self.cfg.max_running;
            } else {
                kept.push(w);
            }
        }
        state.waiting = kept;
    }

    fn admit_unguarded(&mut self, state: &mut SchedulerState, plan: &mut StepPlan) {
        let room = self.cfg.max_running.saturating_sub(state.running.len());
        let take = room.min(state.waiting.len());
        for w in state.waiting.drain(..take).collect::<Vec<_>>() {
            let p = self.predicted(&w);
            self.predictions.remove(&w.id);
            plan.admitted.push(w.id);
            state.running.push(RunningEntry::new(w, p));
        }
    }
}

impl Policy for ScorpioPolicy {
    fn name(&self) -> &str {
        "scorpio"
    }

    fn plan_step(&mut self, state: &mut SchedulerState) -> StepPlan {
        let mut plan = StepPlan::default();

        if self.cfg.ttft_guard {
            state.waiting.sort_by(ldf_cmp);
            let mut rejected = Vec::new();
            reject_unattainable(state, &self.prefill, &mut rejected);
            for r in &rejected {
                self.predictions.remove(&r.request.id);
            }
            plan.rejected = rejected;
        }

        if self.cfg.tpot_guard {
            self.admit_guarded(state, &mut plan);
        } else {
            self.admit_unguarded(state, &mut plan);
        }

        let min_slo = state.running.iter().map(|e| e.request.tpot_slo).fold(f64::INFINITY, f64::min);
        if min_slo.is_finite() {
            plan.min_slo = Some(min_slo);
            plan.vbs = state.running.iter().map(|e| min_slo / e.request.tpot_slo).sum();
        }
        for e in state.running.iter_mut().filter(|e| !e.is_prefilling()) {
            if self.cfg.tpot_guard {
                let (credit, batched) = credit_step(e.credit, min_slo / e.request.tpot_slo);
                e.credit = credit;
                if batched {
                    plan.decode_batch.push(e.request.id);
                }
            } else {
                plan.decode_batch.push(e.request.id);
            }
        }
        plan
    }
}
