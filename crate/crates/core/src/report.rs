//! Run summaries, QPS sweeps and guard ablations, plus their CSV forms.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{simulate, SimConfig, SimResult};
use crate::error::{invalid, Result};
use crate::sched::{PolicyName, PolicySpec};
use crate::seed::{derive_seed, derive_seed_u64};
use crate::slo::{adherence, RequestOutcome, RequestStatus};
use crate::workload::{generate, rescale_arrivals, Trace, WorkloadSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
}

/// Nearest-rank percentile of an ascending slice.
pub fn nearest_rank(sorted: &[f64], pct: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

fn percentiles(mut xs: Vec<f64>) -> Option<Percentiles> {
    xs.sort_by(f64::total_cmp);
    Some(Percentiles { p50: nearest_rank(&xs, 50.0)?, p90: nearest_rank(&xs, 90.0)?, p99: nearest_rank(&xs, 99.0)? })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub total: usize,
    pub compliant: usize,
    pub adherence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub total: usize,
    pub completed: usize,
    pub compliant: usize,
    /// Denominator of goodput, seconds.
    pub horizon_s: f64,
    /// Compliant requests per second.
    pub goodput: f64,
    pub adherence: f64,
    pub per_category: BTreeMap<u8, CategoryStats>,
    pub status_counts: BTreeMap<RequestStatus, usize>,
    /// Among completed requests.
    pub ttft_violations: usize,
    pub tpot_violations: usize,
    pub ttft_s: Option<Percentiles>,
    pub tpot_ms: Option<Percentiles>,
    /// `(time_s, compliant so far)`, starting at `(0, 0)` and closed at the
    /// horizon.
    pub cumulative: Vec<(f64, usize)>,
}

pub fn summarize(outcomes: &[RequestOutcome], horizon: f64) -> RunReport {
    let total = outcomes.len();
    let compliant = outcomes.iter().filter(|o| o.slo_compliant).count();
    let completed = outcomes.iter().filter(|o| o.status == RequestStatus::Completed).count();

    let mut per_category: BTreeMap<u8, CategoryStats> = BTreeMap::new();
    let mut status_counts = BTreeMap::new();
    for o in outcomes {
        let c = per_category.entry(o.category).or_default();
        c.total += 1;
        c.compliant += o.slo_compliant as usize;
        *status_counts.entry(o.status).or_insert(0) += 1;
    }
    for c in per_category.values_mut() {
        c.adherence = c.compliant as f64 / c.total as f64;
    }

    let mut done: Vec<f64> = outcomes.iter().filter(|o| o.slo_compliant).filter_map(|o| o.completion_time).collect();
    done.sort_by(f64::total_cmp);
    let mut cumulative = Vec::with_capacity(done.len() + 2);
    cumulative.push((0.0, 0));
    cumulative.extend(done.iter().enumerate().map(|(k, &t)| (t, k + 1)));
    let close = horizon.max(done.last().copied().unwrap_or(0.0));
    if close > 0.0 {
        cumulative.push((close, compliant));
    }

    RunReport {
        total,
        completed,
        compliant,
        horizon_s: horizon,
        goodput: if horizon > 0.0 { compliant as f64 / horizon } else { 0.0 },
        adherence: adherence(outcomes).unwrap_or(0.0),
        per_category,
        status_counts,
        ttft_violations: outcomes.iter().filter(|o| o.ttft_violated()).count(),
        tpot_violations: outcomes.iter().filter(|o| o.tpot_violated()).count(),
        ttft_s: percentiles(outcomes.iter().filter_map(|o| o.ttft).collect()),
        tpot_ms: percentiles(outcomes.iter().filter_map(|o| o.tpot.map(|t| t * 1e3)).collect()),
        cumulative,
    }
}

/// Goodput window: the configured horizon, or the span until the last
/// arrival or the end of the run, whichever is later.
pub fn goodput_horizon(result: &SimResult, trace: &Trace, horizon: Option<f64>) -> f64 {
    horizon.unwrap_or_else(|| result.end_time.max(trace.span()))
}

pub fn report_run(result: &SimResult, trace: &Trace, horizon: Option<f64>) -> RunReport {
    summarize(&result.outcomes, goodput_horizon(result, trace, horizon))
}

/// Where sweep traces come from.
#[derive(Debug, Clone, PartialEq)]
pub enum WorkloadSource {
    /// Regenerated per QPS with a seed derived from the sweep seed.
    Spec(WorkloadSpec),
    /// Arrivals rescaled to each QPS.
    Trace(Trace),
}

impl WorkloadSource {
    pub fn trace_at(&self, qps: f64, seed: u64) -> Result<Trace> {
        match self {
            WorkloadSource::Spec(spec) => {
                let spec = WorkloadSpec {
                    qps,
                    seed: derive_seed_u64(derive_seed(seed, "workload"), qps.to_bits()),
                    ..spec.clone()
                };
                generate(&spec)
            }
            WorkloadSource::Trace(t) => {
                let base = t
                    .mean_qps()
                    .ok_or_else(|| invalid("trace needs two or more arrivals over a positive span to rescale"))?;
                rescale_arrivals(t, qps / base)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub qps: f64,
    pub policy: String,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub qps: f64,
    pub numerator: String,
    pub denominator: String,
    /// `None` when the denominator's goodput is 0.
    pub goodput_ratio: Option<f64>,
    pub adherence_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub qps: Vec<f64>,
    pub policies: Vec<String>,
    /// Row-major: all policies for the first QPS, then the next QPS.
    pub cells: Vec<SweepCell>,
    /// First policy against each of the others.
    pub ratios: Vec<RatioRow>,
}

impl SweepReport {
    pub fn cell(&self, qps_index: usize, policy_index: usize) -> &SweepCell {
        &self.cells[qps_index * self.policies.len() + policy_index]
    }
}

/// Seed for one sweep cell.
pub fn cell_seed(base: u64, qps: f64, policy: &str) -> u64 {
    derive_seed(derive_seed_u64(base, qps.to_bits()), policy)
}

/// One run per `(qps, policy)`. Traces are shared across policies at a QPS.
/// Cells run on the current rayon pool and are merged in input order.
pub fn sweep(source: &WorkloadSource, qps: &[f64], policies: &[PolicySpec], base: &SimConfig) -> Result<SweepReport> {
    if qps.is_empty() || policies.is_empty() {
        return Err(invalid("a sweep needs at least one QPS value and one policy"));
    }
    if let Some(q) = qps.iter().find(|q| !(**q > 0.0) || !q.is_finite()) {
        return Err(invalid(format!("sweep QPS must be positive, got {q}")));
    }
    let labels: Vec<String> = policies.iter().map(PolicySpec::label).collect();
    let traces: Vec<Trace> = qps.par_iter().map(|&q| source.trace_at(q, base.seed)).collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..qps.len()).flat_map(|i| (0..policies.len()).map(move |j| (i, j))).collect();
    let cells: Vec<SweepCell> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let cfg = SimConfig {
                policy: policies[j].clone(),
                seed: cell_seed(base.seed, qps[i], &labels[j]),
                log_decisions: false,
                ..base.clone()
            };
            let result = simulate(&traces[i], &cfg)?;
            Ok(SweepCell {
                qps: qps[i],
                policy: labels[j].clone(),
                report: report_run(&result, &traces[i], base.horizon),
            })
        })
        .collect::<Result<_>>()?;

    let np = policies.len();
    let mut ratios = Vec::new();
    for (i, &q) in qps.iter().enumerate() {
        let head = &cells[i * np];
        for other in &cells[i * np + 1..(i + 1) * np] {
            ratios.push(RatioRow {
                qps: q,
                numerator: head.policy.clone(),
                denominator: other.policy.clone(),
                goodput_ratio: (other.report.goodput > 0.0).then(|| head.report.goodput / other.report.goodput),
                adherence_gain: head.report.adherence - other.report.adherence,
            });
        }
    }
    Ok(SweepReport { qps: qps.to_vec(), policies: labels, cells, ratios })
}

/// Guard switch combinations, in display order.
pub const ABLATION_CELLS: [(&str, bool, bool); 4] =
    [("neither", false, false), ("ttft_only", true, false), ("tpot_only", false, true), ("both", true, true)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub config: String,
    pub report: RunReport,
}

/// Scorpio with each combination of guards on one trace and seed.
pub fn ablation(trace: &Trace, base: &SimConfig) -> Result<Vec<AblationCell>> {
    let template = if base.policy.name == PolicyName::Scorpio {
        base.policy.clone()
    } else {
        PolicySpec { max_batch_size: base.policy.max_batch_size, ..PolicySpec::named(PolicyName::Scorpio) }
    };
    ABLATION_CELLS
        .par_iter()
        .map(|&(label, ttft, tpot)| {
            let cfg = SimConfig {
                policy: PolicySpec { ttft_guard: ttft, tpot_guard: tpot, ..template.clone() },
                log_decisions: false,
                ..base.clone()
            };
            let result = simulate(trace, &cfg)?;
            Ok(AblationCell { config: label.to_string(), report: report_run(&result, trace, base.horizon) })
        })
        .collect()
}

pub fn write_outcomes_csv<W: Write>(w: W, outcomes: &[RequestOutcome]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["id", "status", "ttft_s", "tpot_ms", "compliant", "category"])?;
    for o in outcomes {
        out.write_record([
            o.id.to_string(),
            o.status.as_str().to_string(),
            o.ttft.map(|t| t.to_string()).unwrap_or_default(),
            o.tpot.map(|t| (t * 1e3).to_string()).unwrap_or_default(),
            o.slo_compliant.to_string(),
            o.category.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_goodput_csv<W: Write>(w: W, sweep: &SweepReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["qps", "policy", "goodput", "adherence", "compliant", "completed", "total"])?;
    for c in &sweep.cells {
        let r = &c.report;
        out.write_record([
            c.qps.to_string(),
            c.policy.clone(),
            r.goodput.to_string(),
            r.adherence.to_string(),
            r.compliant.to_string(),
            r.completed.to_string(),
            r.total.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_cumulative_csv<W: Write>(w: W, sweep: &SweepReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["qps", "policy", "time_s", "compliant"])?;
    for c in &sweep.cells {
        for (t, k) in &c.report.cumulative {
            out.write_record([c.qps.to_string(), c.policy.clone(), t.to_string(), k.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_ablation_csv<W: Write>(w: W, cells: &[AblationCell]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "config",
        "goodput",
        "adherence",
        "ttft_violations",
        "tpot_violations",
        "rejected_ttft",
        "rejected_admission",
    ])?;
    for c in cells {
        let r = &c.report;
        let count = |s| r.status_counts.get(&s).copied().unwrap_or(0).to_string();
        out.write_record([
            c.config.clone(),
            r.goodput.to_string(),
            r.adherence.to_string(),
            r.ttft_violations.to_string(),
            r.tpot_violations.to_string(),
            count(RequestStatus::RejectedTtft),
            count(RequestStatus::RejectedAdmission),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn format_run(label: &str, r: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "policy      {label}");
    let _ = writeln!(s, "requests    {} ({} completed, {} compliant)", r.total, r.completed, r.compliant);
    let _ = writeln!(s, "goodput     {:.4} req/s over {:.3} s", r.goodput, r.horizon_s);
    let _ = writeln!(s, "adherence   {:.4}", r.adherence);
    let _ = writeln!(s, "violations  ttft {}  tpot {}", r.ttft_violations, r.tpot_violations);
    for (status, n) in &r.status_counts {
        let _ = writeln!(s, "  {:<20}{n}", status.as_str());
    }
    if let (Some(t), Some(p)) = (r.ttft_s, r.tpot_ms) {
        let _ = writeln!(s, "ttft s      p50 {:.4}  p90 {:.4}  p99 {:.4}", t.p50, t.p90, t.p99);
        let _ = writeln!(s, "tpot ms     p50 {:.3}  p90 {:.3}  p99 {:.3}", p.p50, p.p90, p.p99);
    }
    s
}

pub fn format_sweep(sweep: &SweepReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>8}  {:<20}{:>12}{:>11}{:>9}", "qps", "policy", "goodput", "adherence", "total");
    for c in &sweep.cells {
        let _ = writeln!(
            s,
            "{:>8}  {:<20}{:>12.4}{:>11.4}{:>9}",
            c.qps, c.policy, c.report.goodput, c.report.adherence, c.report.total
        );
    }
    for r in &sweep.ratios {
        let ratio = r.goodput_ratio.map_or("n/a".to_string(), |x| format!("{x:.2}x"));
        let _ = writeln!(
            s,
            "qps {}: {} vs {}: goodput {ratio}, adherence {:+.4}",
            r.qps, r.numerator, r.denominator, r.adherence_gain
        );
    }
    s
}
