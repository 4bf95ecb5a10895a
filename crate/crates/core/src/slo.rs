//! Requests, outcomes, and SLO-compliance arithmetic.
//!
//! A request is compliant when it completes with TTFT and TPOT both at or
//! under its thresholds. Goodput is compliant requests per second of the
//! measurement window; adherence is the compliant fraction of every issued
//! request, rejected and unfinished ones included.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// One inference job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    /// Seconds on the simulation clock.
    pub arrival_time: f64,
    pub prompt_len: u32,
    pub true_output_len: u32,
    /// TTFT threshold in seconds.
    pub ttft_slo: f64,
    /// TPOT threshold in seconds.
    pub tpot_slo: f64,
    /// 1..=6 for a table category, 0 when uncategorized.
    pub category: u8,
}

impl Request {
    pub fn validate(&self) -> Result<()> {
        if self.prompt_len == 0 {
            return Err(invalid(format!("request {}: prompt_len must be >= 1", self.id)));
        }
        if self.true_output_len == 0 {
            return Err(invalid(format!("request {}: output_len must be >= 1", self.id)));
        }
        if !(self.ttft_slo > 0.0) || !(self.tpot_slo > 0.0) {
            return Err(invalid(format!("request {}: SLO thresholds must be positive", self.id)));
        }
        if !self.arrival_time.is_finite() || self.arrival_time < 0.0 {
            return Err(invalid(format!("request {}: arrival time must be finite and >= 0", self.id)));
        }
        Ok(())
    }

    /// Absolute TTFT deadline.
    #[inline]
    pub fn deadline(&self) -> f64 {
        self.arrival_time + self.ttft_slo
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestStatus {
    Completed,
    /// Dropped by the TTFT guard (or early rejection) as unattainable.
    RejectedTtft,
    /// Dropped because no running set could ever accept it under TPOT control.
    RejectedAdmission,
    /// Still queued or running when the horizon cut the run off.
    Unfinished,
}

impl RequestStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RequestStatus::Completed => "completed",
            RequestStatus::RejectedTtft => "rejected_ttft",
            RequestStatus::RejectedAdmission => "rejected_admission",
            RequestStatus::Unfinished => "unfinished",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestOutcome {
    pub id: u64,
    pub category: u8,
    pub arrival_time: f64,
    pub ttft_slo: f64,
    pub tpot_slo: f64,
    pub status: RequestStatus,
    pub first_token_time: Option<f64>,
    pub completion_time: Option<f64>,
    pub ttft: Option<f64>,
    pub tpot: Option<f64>,
    pub slo_compliant: bool,
}

impl RequestOutcome {
    /// Outcome of a request that emitted all of its tokens at `emit_times`.
    pub fn completed(req: &Request, emit_times: &[f64]) -> Result<Self> {
        let first = *emit_times.first().ok_or(Error::NoTokens)?;
        let last = *emit_times.last().ok_or(Error::NoTokens)?;
        let tpot = compute_tpot(first, emit_times)?;
        let ttft = first - req.arrival_time;
        if ttft < 0.0 {
            return Err(invalid(format!("request {}: first token precedes arrival", req.id)));
        }
        let mut out = RequestOutcome {
            id: req.id,
            category: req.category,
            arrival_time: req.arrival_time,
            ttft_slo: req.ttft_slo,
            tpot_slo: req.tpot_slo,
            status: RequestStatus::Completed,
            first_token_time: Some(first),
            completion_time: Some(last),
            ttft: Some(ttft),
            tpot: Some(tpot),
            slo_compliant: false,
        };
        out.slo_compliant = is_compliant(req, &out);
        Ok(out)
    }

    /// Outcome for a request that never completed.
    pub fn not_completed(req: &Request, status: RequestStatus) -> Self {
        debug_assert_ne!(status, RequestStatus::Completed);
        RequestOutcome {
            id: req.id,
            category: req.category,
            arrival_time: req.arrival_time,
            ttft_slo: req.ttft_slo,
            tpot_slo: req.tpot_slo,
            status,
            first_token_time: None,
            completion_time: None,
            ttft: None,
            tpot: None,
            slo_compliant: false,
        }
    }

    pub fn ttft_violated(&self) -> bool {
        matches!(self.ttft, Some(t) if t > self.ttft_slo)
    }

    pub fn tpot_violated(&self) -> bool {
        matches!(self.tpot, Some(t) if t > self.tpot_slo)
    }
}

/// Mean inter-token latency after the first token.
///
/// A single-token output has no decode interval and is defined as 0.
pub fn compute_tpot<T: Scalar>(first_token_time: T, token_emit_times: &[T]) -> Result<T> {
    let last = *token_emit_times.last().ok_or(Error::NoTokens)?;
    let n = token_emit_times.len();
    if n == 1 {
        return Ok(T::zero());
    }
    Ok((last - first_token_time) / T::of_count(n - 1))
}

/// Both thresholds met, inclusive.
pub fn is_compliant(req: &Request, outcome: &RequestOutcome) -> bool {
    match (outcome.status, outcome.ttft, outcome.tpot) {
        (RequestStatus::Completed, Some(ttft), Some(tpot)) => ttft <= req.ttft_slo && tpot <= req.tpot_slo,
        _ => false,
    }
}

pub fn compliant_count(outcomes: &[RequestOutcome]) -> usize {
    outcomes.iter().filter(|o| o.slo_compliant).count()
}

/// Compliant requests per second over `horizon`.
pub fn goodput(outcomes: &[RequestOutcome], horizon: f64) -> Result<f64> {
    if !(horizon > 0.0) {
        return Err(Error::NonPositiveHorizon(horizon));
    }
    Ok(compliant_count(outcomes) as f64 / horizon)
}

/// Compliant fraction of every issued request.
pub fn adherence(outcomes: &[RequestOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::EmptyOutcomes);
    }
    Ok(compliant_count(outcomes) as f64 / outcomes.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SloCategory {
    pub id: u8,
    /// Seconds.
    pub ttft_slo: f64,
    /// Seconds.
    pub tpot_slo: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SloCategoryTable {
    pub categories: Vec<SloCategory>,
}

impl SloCategoryTable {
    pub fn new(categories: Vec<SloCategory>) -> Result<Self> {
        let table = SloCategoryTable { categories };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, c) in self.categories.iter().enumerate() {
            if !(c.ttft_slo > 0.0) || !(c.tpot_slo > 0.0) {
                return Err(invalid(format!("category {}: thresholds must be positive", c.id)));
            }
            if self.categories[..i].iter().any(|o| o.id == c.id) {
                return Err(invalid(format!("duplicate category id {}", c.id)));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: u8) -> Option<&SloCategory> {
        self.categories.iter().find(|c| c.id == id)
    }

    fn from_rows(ttft_s: [f64; 6], tpot_ms: [f64; 6]) -> Self {
        let categories = (0..6)
            .map(|i| SloCategory { id: i as u8 + 1, ttft_slo: ttft_s[i], tpot_slo: tpot_ms[i] / 1000.0 })
            .collect();
        SloCategoryTable { categories }
    }

    /// Six categories tuned for an 8B model on one GPU.
    pub fn llama_8b() -> Self {
        Self::from_rows([0.5, 2.0, 3.0, 0.5, 1.0, 7.5], [30.0, 30.0, 30.0, 50.0, 50.0, 50.0])
    }

    /// Loosened thresholds for a 27B model with tensor parallelism.
    pub fn gemma_27b() -> Self {
        Self::from_rows([1.0, 4.0, 6.0, 1.0, 2.0, 15.0], [60.0, 60.0, 60.0, 100.0, 100.0, 100.0])
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "llama8b" | "llama-8b" | "llama_8b" => Some(Self::llama_8b()),
            "gemma27b" | "gemma-27b" | "gemma_27b" => Some(Self::gemma_27b()),
            _ => None,
        }
    }
}

impl Default for SloCategoryTable {
    fn default() -> Self {
        Self::llama_8b()
    }
}
