//! Discrete-event simulation of an iteration-level batching server.
//!
//! Each step prefills the admitted prompts back to back and then runs one
//! decode iteration for the selected batch. Step time is the sum of the
//! prefill times plus one ITL. Arrivals that land mid-step become visible at
//! the step boundary.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::costmodel::CostModel;
use crate::error::{invalid, Error, Result};
use crate::predictor::PredictorConfig;
use crate::sched::{AdmissionRecord, Policy, PolicySpec, SchedulerState};
use crate::seed::derive_seed;
use crate::slo::{RequestOutcome, RequestStatus};
use crate::workload::Trace;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Stop planning new steps once the clock reaches this; `None` drains.
    pub horizon: Option<f64>,
    pub log_decisions: bool,
}

/// Everything needed to run one simulation from a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: Option<f64>,
    pub cost: CostModel<f64>,
    pub policy: PolicySpec,
    pub predictor: PredictorConfig,
    pub seed: u64,
    pub log_decisions: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(h) = self.horizon {
            if !(h > 0.0) {
                return Err(Error::NonPositiveHorizon(h));
            }
        }
        self.cost.validate()?;
        self.policy.validate()
    }

    pub fn options(&self) -> RunOptions {
        RunOptions { horizon: self.horizon, log_decisions: self.log_decisions }
    }

    pub fn build_policy(&self, trace: &Trace) -> Result<Box<dyn Policy>> {
        let sample: Vec<u32> = trace.requests.iter().map(|r| r.true_output_len).collect();
        let predictor = self.predictor.build(&sample, derive_seed(self.seed, "predictor"))?;
        self.policy.build(self.cost.itl, self.cost.prefill, predictor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub start_s: f64,
    pub duration_s: f64,
    pub prefills: u32,
    pub batch: u32,
}

/// One line of the decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub step: u64,
    pub now_s: f64,
    pub admitted: Vec<u64>,
    pub rejected: Vec<u64>,
    pub batch: Vec<u64>,
    pub vbs: f64,
    pub min_slo_ms: Option<f64>,
    pub admissions: Vec<AdmissionRecord>,
}

/// Wall-clock accounting. Not deterministic, so kept out of comparisons.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WallTimes {
    /// Inside `plan_step`.
    pub policy: Duration,
    /// The whole simulation loop.
    pub engine: Duration,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    /// Token emit times, indexed like the trace.
    pub emits: Vec<Vec<f64>>,
    pub steps: Vec<StepRecord>,
    pub decisions: Vec<DecisionRecord>,
    #[serde(skip)]
    pub wall: WallTimes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub policy: String,
    /// One per trace request, in trace order.
    pub outcomes: Vec<RequestOutcome>,
    pub log: EventLog,
    /// Clock when the loop stopped.
    pub end_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overhead {
    /// Simulated serving time.
    pub total_s: f64,
    /// Wall time of the simulation loop.
    pub schedule_s: f64,
    /// Wall time inside the policy.
    pub policy_s: f64,
    /// `policy_s / total_s * 100`.
    pub overhead_pct: f64,
}

pub fn measure_overhead(result: &SimResult) -> Overhead {
    let total_s = result.log.steps.last().map_or(0.0, |s| s.start_s + s.duration_s);
    let policy_s = result.log.wall.policy.as_secs_f64();
    Overhead {
        total_s,
        schedule_s: result.log.wall.engine.as_secs_f64(),
        policy_s,
        overhead_pct: if total_s > 0.0 { policy_s / total_s * 100.0 } else { 0.0 },
    }
}

/// Build the configured policy and run it over `trace`.
pub fn simulate(trace: &Trace, config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    let mut policy = config.build_policy(trace)?;
    run(trace, &config.cost, policy.as_mut(), &config.options())
}

pub fn run(trace: &Trace, cost: &CostModel<f64>, policy: &mut dyn Policy, opts: &RunOptions) -> Result<SimResult> {
    let started = Instant::now();
    trace.validate()?;
    cost.validate()?;
    if let Some(h) = opts.horizon {
        if !(h > 0.0) {
            return Err(Error::NonPositiveHorizon(h));
        }
    }
    let horizon = opts.horizon.unwrap_or(f64::INFINITY);
    let reqs = &trace.requests;
    let n = reqs.len();
    let pos: HashMap<u64, usize> = reqs.iter().enumerate().map(|(i, r)| (r.id, i)).collect();

    let mut log = EventLog { emits: vec![Vec::new(); n], ..Default::default() };
    let mut outcomes: Vec<Option<RequestOutcome>> = vec![None; n];
    // Step stamp per request: 1 + step when it prefills, 1 + step when it decodes.
    let mut prefill_mark = vec![0u64; n];
    let mut decode_mark = vec![0u64; n];
    let mut state = SchedulerState::default();
    let mut next = 0usize;
    let mut now = 0.0f64;
    let mut step: u64 = 0;

    loop {
        while next < n && reqs[next].arrival_time <= now {
            state.waiting.push(reqs[next].clone());
            next += 1;
        }
        if state.waiting.is_empty() && state.running.is_empty() {
            if next == n || reqs[next].arrival_time >= horizon {
                break;
            }
            now = now.max(reqs[next].arrival_time);
            continue;
        }
        if now >= horizon {
            break;
        }

        state.now = now;
        let t0 = Instant::now();
        let plan = policy.plan_step(&mut state);
        log.wall.policy += t0.elapsed();

        let stamp = step + 1;
        for r in &plan.rejected {
            let i = *pos
                .get(&r.request.id)
                .ok_or_else(|| Error::Invariant(format!("rejected unknown request {}", r.request.id)))?;
            if outcomes[i].is_some() {
                return Err(Error::Invariant(format!("request {} rejected twice", r.request.id)));
            }
            outcomes[i] = Some(RequestOutcome::not_completed(&reqs[i], r.status));
        }
        for id in &plan.admitted {
            let i = pos[id];
            if prefill_mark[i] != 0 {
                return Err(Error::Invariant(format!("request {id} admitted twice")));
            }
            prefill_mark[i] = stamp;
        }
        for id in &plan.decode_batch {
            let i = *pos.get(id).ok_or_else(|| Error::Invariant(format!("batched unknown request {id}")))?;
            if prefill_mark[i] == stamp {
                return Err(Error::Invariant(format!("request {id} is both admitted and batched in step {step}")));
            }
            if decode_mark[i] == stamp {
                return Err(Error::Invariant(format!("request {id} batched twice in step {step}")));
            }
            decode_mark[i] = stamp;
        }

        let mut prefill_s = 0.0;
        let mut prefills = 0u32;
        let mut batch = 0u32;
        let mut len_sum = 0u64;
        for e in &state.running {
            let i = pos[&e.request.id];
            if e.is_prefilling() {
                if prefill_mark[i] != stamp {
                    return Err(Error::Invariant(format!(
                        "request {} entered the running set without being admitted",
                        e.request.id
                    )));
                }
                prefill_s += cost.prefill.prefill_time_unchecked(e.request.prompt_len);
                prefills += 1;
            } else if decode_mark[i] == stamp {
                batch += 1;
                len_sum += e.seq_len();
            }
        }
        if prefills as usize != plan.admitted.len() || batch as usize != plan.decode_batch.len() {
            return Err(Error::Invariant(format!("plan of step {step} names requests outside the running set")));
        }
        let decode_s = if batch > 0 { cost.itl.itl(batch as f64, len_sum as f64 / batch as f64)? } else { 0.0 };
        let duration = prefill_s + decode_s;

        if opts.log_decisions {
            log.decisions.push(DecisionRecord {
                step,
                now_s: now,
                admitted: plan.admitted.clone(),
                rejected: plan.rejected.iter().map(|r| r.request.id).collect(),
                batch: plan.decode_batch.clone(),
                vbs: plan.vbs,
                min_slo_ms: plan.min_slo.map(|s| s * 1e3),
                admissions: plan.admissions.clone(),
            });
        }
        for a in &plan.admissions {
            debug_assert!(a.estimate_s <= a.bound_s, "unsafe admission of {}", a.id);
        }

        if duration <= 0.0 {
            if plan.is_idle() && plan.rejected.is_empty() {
                // Nothing runnable: wait for the next arrival, or give up.
                if next < n && reqs[next].arrival_time < horizon {
                    now = reqs[next].arrival_time;
                    continue;
                }
                if next < n || opts.horizon.is_some() {
                    break;
                }
                return Err(Error::Invariant(format!(
                    "policy `{}` made no progress with {} waiting and {} running",
                    policy.name(),
                    state.waiting.len(),
                    state.running.len()
                )));
            }
            if duration < 0.0 {
                return Err(invalid("negative step duration; check cost parameters"));
            }
        }

        let end = now + duration;
        let mut finished = Vec::new();
        for e in state.running.iter_mut() {
            let i = pos[&e.request.id];
            if prefill_mark[i] == stamp || decode_mark[i] == stamp {
                e.tokens_generated += 1;
                log.emits[i].push(end);
                if e.tokens_generated >= e.request.true_output_len {
                    finished.push(i);
                }
            }
        }
        if !finished.is_empty() {
            state.running.retain(|e| e.tokens_generated < e.request.true_output_len);
            for i in finished {
                outcomes[i] = Some(RequestOutcome::completed(&reqs[i], &log.emits[i])?);
            }
        }
        log.steps.push(StepRecord { start_s: now, duration_s: duration, prefills, batch });
        step += 1;
        now = end;
    }

    let outcomes: Vec<RequestOutcome> = outcomes
        .into_iter()
        .zip(reqs)
        .map(|(o, r)| o.unwrap_or_else(|| RequestOutcome::not_completed(r, RequestStatus::Unfinished)))
        .collect();
    log.wall.engine = started.elapsed();
    Ok(SimResult { policy: policy.name().to_string(), outcomes, log, end_time: now })
}
