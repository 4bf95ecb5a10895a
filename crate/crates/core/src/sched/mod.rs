//! Scheduling policies and the state they operate on.
//!
//! A policy sees the waiting queue and the running set at the start of a
//! step and returns a [`StepPlan`]. It owns the bookkeeping of moving
//! requests between the two collections (admission, rejection, credits);
//! the engine owns token emission and retirement.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::costmodel::{ItlCoeffs, PrefillCoeffs};
use crate::error::{invalid, Result};
use crate::predictor::LengthPredictor;
use crate::scalar::Scalar;
use crate::slo::{Request, RequestStatus};

pub mod baselines;
pub mod scorpio;

pub use baselines::{BaselineConfig, BaselineKind, BaselinePolicy};
pub use scorpio::{AdmissionMin, ScorpioConfig, ScorpioPolicy};

/// Slack on the credit threshold so that sums such as `5 * 0.6` that land a
/// rounding error short of 1 still batch.
pub const CREDIT_EPS: f64 = 1e-9;

/// A request that has been admitted (prefilled) and is decoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningEntry {
    pub request: Request,
    pub tokens_generated: u32,
    pub predicted_len: u32,
    pub credit: f64,
}

impl RunningEntry {
    pub fn new(request: Request, predicted_len: u32) -> Self {
        RunningEntry { request, tokens_generated: 0, predicted_len, credit: 0.0 }
    }

    /// Prompt plus generated tokens.
    #[inline]
    pub fn seq_len(&self) -> u64 {
        self.request.prompt_len as u64 + self.tokens_generated as u64
    }

    /// Admitted this step; prefill has not finished yet.
    #[inline]
    pub fn is_prefilling(&self) -> bool {
        self.tokens_generated == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    pub waiting: Vec<Request>,
    pub running: Vec<RunningEntry>,
    pub now: f64,
}

/// Total order used by least-deadline-first queues.
pub fn ldf_cmp(a: &Request, b: &Request) -> Ordering {
    a.deadline().total_cmp(&b.deadline()).then(a.arrival_time.total_cmp(&b.arrival_time)).then(a.id.cmp(&b.id))
}

pub fn fcfs_cmp(a: &Request, b: &Request) -> Ordering {
    a.arrival_time.total_cmp(&b.arrival_time).then(a.id.cmp(&b.id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub request: Request,
    pub status: RequestStatus,
    /// Estimate that triggered the rejection, seconds.
    pub estimate: Option<f64>,
}

/// Everything needed to re-check one admission decision independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionRecord {
    pub id: u64,
    pub predicted_len: u32,
    /// `(tpot_slo_s, seq_len)` for every member of the post-admission set,
    /// the candidate last.
    pub members: Vec<(f64, u64)>,
    pub estimate_s: f64,
    pub bound_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepPlan {
    /// Ids that prefill this step.
    pub admitted: Vec<u64>,
    /// Ids of running entries that decode one token this step.
    pub decode_batch: Vec<u64>,
    pub rejected: Vec<Rejection>,
    /// Virtual batch size of the running set after admission.
    pub vbs: f64,
    /// Strictest TPOT SLO in the running set, seconds.
    pub min_slo: Option<f64>,
    pub admissions: Vec<AdmissionRecord>,
}

impl StepPlan {
    pub fn is_idle(&self) -> bool {
        self.admitted.is_empty() && self.decode_batch.is_empty()
    }
}

pub trait Policy: Send {
    fn name(&self) -> &str;
    fn plan_step(&mut self, state: &mut SchedulerState) -> StepPlan;
}

/// TPOT-relative proportionality of a request against the strictest SLO.
pub fn trp<T: Scalar>(tpot_slo: T, min_slo: T) -> Result<T> {
    if !(tpot_slo > T::zero()) || !(min_slo > T::zero()) {
        return Err(invalid(format!("trp needs positive SLOs, got {tpot_slo} and {min_slo}")));
    }
    Ok(min_slo / tpot_slo)
}

/// Sum of TRPs; 0 for an empty set.
pub fn vbs<T: Scalar>(tpot_slos: &[T], min_slo: T) -> Result<T> {
    let mut total = T::zero();
    for &s in tpot_slos {
        total += trp(s, min_slo)?;
    }
    Ok(total)
}

/// One step of the credit recurrence. Returns the new balance and whether
/// the request decodes this step.
#[inline]
pub fn credit_step<T: Scalar>(credit: T, trp: T) -> (T, bool) {
    let c = credit + trp;
    if c >= T::one() - T::of(CREDIT_EPS) {
        let left = c - T::one();
        (if left > T::zero() { left } else { T::zero() }, true)
    } else {
        (c, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    Scorpio,
    Greedy,
    Sjf,
    EarlyReject,
}

impl PolicyName {
    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyName::Scorpio => "scorpio",
            PolicyName::Greedy => "greedy",
            PolicyName::Sjf => "sjf",
            PolicyName::EarlyReject => "early_reject",
        }
    }
}

impl std::str::FromStr for PolicyName {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "scorpio" => PolicyName::Scorpio,
            "greedy" => PolicyName::Greedy,
            "sjf" => PolicyName::Sjf,
            "early_reject" => PolicyName::EarlyReject,
            other => return Err(invalid(format!("unknown policy `{other}`"))),
        })
    }
}

fn yes() -> bool {
    true
}

fn default_cap() -> usize {
    256
}

/// Flat policy description as it appears in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub name: PolicyName,
    /// Scorpio only.
    #[serde(default = "yes")]
    pub ttft_guard: bool,
    /// Scorpio only.
    #[serde(default = "yes")]
    pub tpot_guard: bool,
    #[serde(default)]
    pub admission_min: AdmissionMin,
    /// Running-set cap for every policy.
    #[serde(default = "default_cap")]
    pub max_batch_size: usize,
    /// Baselines only: a step that admits anything skips decode.
    #[serde(default = "yes")]
    pub prefill_priority: bool,
}

impl PolicySpec {
    pub fn named(name: PolicyName) -> Self {
        PolicySpec {
            name,
            ttft_guard: true,
            tpot_guard: true,
            admission_min: AdmissionMin::default(),
            max_batch_size: default_cap(),
            prefill_priority: true,
        }
    }

    /// Short label, including the guard switches for Scorpio.
    pub fn label(&self) -> String {
        match (self.name, self.ttft_guard, self.tpot_guard) {
            (PolicyName::Scorpio, true, true) => "scorpio".into(),
            (PolicyName::Scorpio, true, false) => "scorpio_ttft_only".into(),
            (PolicyName::Scorpio, false, true) => "scorpio_tpot_only".into(),
            (PolicyName::Scorpio, false, false) => "scorpio_neither".into(),
            (n, _, _) => n.as_str().into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_batch_size == 0 {
            return Err(invalid("max_batch_size must be >= 1"));
        }
        Ok(())
    }

    pub fn build(
        &self,
        itl: ItlCoeffs<f64>,
        prefill: PrefillCoeffs<f64>,
        predictor: LengthPredictor,
    ) -> Result<Box<dyn Policy>> {
        self.validate()?;
        Ok(match self.name {
            PolicyName::Scorpio => Box::new(ScorpioPolicy::new(
                ScorpioConfig {
                    ttft_guard: self.ttft_guard,
                    tpot_guard: self.tpot_guard,
                    admission_min: self.admission_min,
                    max_running: self.max_batch_size,
                },
                itl,
                prefill,
                predictor,
            )?),
            baseline => {
                let kind = match baseline {
                    PolicyName::Greedy => BaselineKind::GreedyFcfs,
                    PolicyName::Sjf => BaselineKind::ShortestPredictedJob,
                    _ => BaselineKind::EarlyReject,
                };
                Box::new(BaselinePolicy::new(
                    BaselineConfig {
                        policy: kind,
                        max_batch_size: self.max_batch_size,
                        prefill_priority: self.prefill_priority,
                    },
                    prefill,
                    predictor,
                )?)
            }
        })
    }
}

/// Drop waiting requests whose prefix-sum TTFT estimate, in current queue
/// order, exceeds their TTFT SLO. Rejected requests do not count toward the
/// prefix of those behind them.
pub(crate) fn reject_unattainable(state: &mut SchedulerState, prefill: &PrefillCoeffs<f64>, out: &mut Vec<Rejection>) {
    let now = state.now;
    let mut cum = 0.0;
    let mut kept = Vec::with_capacity(state.waiting.len());
    for w in state.waiting.drain(..) {
        let p = prefill.prefill_time_unchecked(w.prompt_len);
        let est = (now - w.arrival_time) + cum + p;
        if est > w.ttft_slo {
            out.push(Rejection { request: w, status: RequestStatus::RejectedTtft, estimate: Some(est) });
        } else {
            cum += p;
            kept.push(w);
        }
    }
    state.waiting = kept;
}
