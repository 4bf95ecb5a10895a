//! Independent oracles and pinned scenarios shared by the integration and
//! acceptance tests. Nothing here calls into the scheduling or fitting code
//! it is used to check.
#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use slosim_core::costmodel::{CostModel, ItlCoeffs, PrefillCoeffs};
use slosim_core::predictor::{Bucketing, LengthPredictor};
use slosim_core::sched::AdmissionRecord;
use slosim_core::slo::{Request, SloCategoryTable};
use slosim_core::workload::{generate, LengthDist, Trace, WorkloadSpec};

// ---------------------------------------------------------------------------
// Step-by-step reference simulator

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RefPolicy {
    Greedy { cap: usize, prefill_priority: bool },
    Scorpio { cap: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefOutcome {
    pub status: &'static str,
    pub ttft: Option<f64>,
    pub tpot: Option<f64>,
}

struct Live {
    req: Request,
    gen: u32,
    credit: f64,
    emits: Vec<f64>,
}

fn ref_itl(c: &ItlCoeffs<f64>, b: f64, l: f64) -> f64 {
    c.alpha * b * l + c.beta * b + c.gamma * l + c.delta
}

fn ref_prefill(c: &PrefillCoeffs<f64>, prompt: u32) -> f64 {
    let p = prompt as f64;
    if p <= c.theta {
        c.phi
    } else {
        c.alpha_p * p + c.beta_p
    }
}

pub fn ref_estimated_tpot(c: &ItlCoeffs<f64>, vbs: f64, l: f64, p: f64) -> f64 {
    c.epsilon * ((c.alpha * vbs + c.gamma) * (l + p / 2.0) + c.beta * vbs + c.delta)
}

/// Run `trace` to drain with a literal re-statement of the policy rules and
/// the step-time composition. Keyed by request id.
pub fn reference_run(trace: &[Request], cost: &CostModel<f64>, policy: RefPolicy) -> BTreeMap<u64, RefOutcome> {
    let mut out = BTreeMap::new();
    let mut waiting: Vec<Request> = Vec::new();
    let mut running: Vec<Live> = Vec::new();
    let mut now = 0.0;
    let mut idx = 0;
    loop {
        while idx < trace.len() && trace[idx].arrival_time <= now {
            waiting.push(trace[idx].clone());
            idx += 1;
        }
        if waiting.is_empty() && running.is_empty() {
            if idx == trace.len() {
                break;
            }
            now = trace[idx].arrival_time;
            continue;
        }

        let mut admitted: Vec<Live> = Vec::new();
        let mut batch: Vec<usize> = Vec::new();
        match policy {
            RefPolicy::Greedy { cap, prefill_priority } => {
                waiting.sort_by(|a, b| a.arrival_time.partial_cmp(&b.arrival_time).unwrap().then(a.id.cmp(&b.id)));
                while running.len() + admitted.len() < cap && !waiting.is_empty() {
                    let r = waiting.remove(0);
                    admitted.push(Live { req: r, gen: 0, credit: 0.0, emits: vec![] });
                }
                if !(prefill_priority && !admitted.is_empty()) {
                    batch = (0..running.len()).collect();
                }
            }
            RefPolicy::Scorpio { cap } => {
                waiting.sort_by(|a, b| {
                    (a.arrival_time + a.ttft_slo)
                        .partial_cmp(&(b.arrival_time + b.ttft_slo))
                        .unwrap()
                        .then(a.arrival_time.partial_cmp(&b.arrival_time).unwrap())
                        .then(a.id.cmp(&b.id))
                });
                let mut ahead = 0.0;
                let mut kept = Vec::new();
                for w in waiting.drain(..) {
                    let p = ref_prefill(&cost.prefill, w.prompt_len);
                    if now - w.arrival_time + ahead + p > w.ttft_slo {
                        out.insert(w.id, RefOutcome { status: "rejected_ttft", ttft: None, tpot: None });
                    } else {
                        ahead += p;
                        kept.push(w);
                    }
                }
                let mut still = Vec::new();
                for w in kept {
                    if running.len() + admitted.len() >= cap {
                        still.push(w);
                        continue;
                    }
                    let pl = w.true_output_len as f64;
                    if ref_estimated_tpot(&cost.itl, 1.0, w.prompt_len as f64, pl) > w.tpot_slo {
                        out.insert(w.id, RefOutcome { status: "rejected_admission", ttft: None, tpot: None });
                        continue;
                    }
                    let mut members: Vec<(f64, f64)> = running
                        .iter()
                        .chain(&admitted)
                        .map(|l| (l.req.tpot_slo, (l.req.prompt_len + l.gen) as f64))
                        .collect();
                    members.push((w.tpot_slo, w.prompt_len as f64));
                    let m = members.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
                    let vbs: f64 = members.iter().map(|x| m / x.0).sum();
                    let l = members.iter().map(|x| x.1).sum::<f64>() / members.len() as f64;
                    if ref_estimated_tpot(&cost.itl, vbs, l, pl) <= m {
                        admitted.push(Live { req: w, gen: 0, credit: 0.0, emits: vec![] });
                    } else {
                        still.push(w);
                    }
                }
                waiting = still;
                let m = running.iter().chain(&admitted).map(|l| l.req.tpot_slo).fold(f64::INFINITY, f64::min);
                for (i, r) in running.iter_mut().enumerate() {
                    r.credit += m / r.req.tpot_slo;
                    if r.credit >= 1.0 - 1e-9 {
                        r.credit = (r.credit - 1.0).max(0.0);
                        batch.push(i);
                    }
                }
            }
        }

        let mut dt: f64 = admitted.iter().map(|a| ref_prefill(&cost.prefill, a.req.prompt_len)).sum();
        if !batch.is_empty() {
            let l = batch.iter().map(|&i| (running[i].req.prompt_len + running[i].gen) as f64).sum::<f64>()
                / batch.len() as f64;
            dt += ref_itl(&cost.itl, batch.len() as f64, l);
        }
        now += dt;
        for &i in &batch {
            running[i].gen += 1;
            running[i].emits.push(now);
        }
        for mut a in admitted {
            a.gen = 1;
            a.emits.push(now);
            running.push(a);
        }
        let mut left = Vec::new();
        for r in running {
            if r.gen >= r.req.true_output_len {
                let first = r.emits[0];
                let last = *r.emits.last().unwrap();
                let k = r.emits.len();
                let tpot = if k == 1 { 0.0 } else { (last - first) / (k - 1) as f64 };
                out.insert(
                    r.req.id,
                    RefOutcome { status: "completed", ttft: Some(first - r.req.arrival_time), tpot: Some(tpot) },
                );
            } else {
                left.push(r);
            }
        }
        running = left;
    }
    out
}

/// Cost parameters whose arithmetic stays on short binary fractions.
pub fn small_cost() -> CostModel<f64> {
    CostModel {
        itl: ItlCoeffs::new(0.0078125, 0.25, 0.015625, 1.0, 1.0).unwrap(),
        prefill: PrefillCoeffs::new(2.0, 4.0, 0.5, 0.25).unwrap(),
    }
}

// ---------------------------------------------------------------------------
// Admission re-check

/// Recompute the TPOT estimate of an admission from its recorded members.
/// Returns `(estimate, min_slo)`.
pub fn recheck_admission(rec: &AdmissionRecord, itl: &ItlCoeffs<f64>) -> (f64, f64) {
    let m = rec.members.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
    let vbs: f64 = rec.members.iter().map(|x| m / x.0).sum();
    let l = rec.members.iter().map(|x| x.1 as f64).sum::<f64>() / rec.members.len() as f64;
    (ref_estimated_tpot(itl, vbs, l, rec.predicted_len as f64), m)
}

// ---------------------------------------------------------------------------
// Least squares

/// Minimum-norm least squares through an SVD.
pub fn ols(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = rows[0].len();
    let a = DMatrix::from_row_iterator(rows.len(), k, rows.iter().flatten().copied());
    let b = DVector::from_column_slice(y);
    a.svd(true, true).solve(&b, 1e-14).unwrap().iter().copied().collect()
}

// ---------------------------------------------------------------------------
// Predictor metrics

#[derive(Debug, Clone, PartialEq)]
pub struct RefEval {
    pub exact: f64,
    pub off1: f64,
    pub off2: f64,
    pub tau: f64,
    pub rmse: f64,
}

fn ref_bucket(bounds: &[f64], len: u32) -> usize {
    let l = len as f64;
    for (i, &b) in bounds.iter().enumerate() {
        if l <= b {
            return i;
        }
    }
    bounds.len() - 1
}

fn ref_representative(bounds: &[f64], k: usize) -> f64 {
    let lo = if k == 0 { 0.0 } else { bounds[k - 1] };
    ((lo + bounds[k]) / 2.0).ceil().max(1.0)
}

/// O(n^2) tau-b.
pub fn tau_b_pairs(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut conc, mut disc, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 {
                tx += 1;
            }
            if dy == 0.0 {
                ty += 1;
            }
            if dx != 0.0 && dy != 0.0 {
                if (dx > 0.0) == (dy > 0.0) {
                    conc += 1;
                } else {
                    disc += 1;
                }
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = (((n0 - tx) * (n0 - ty)) as f64).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (conc - disc) as f64 / denom
    }
}

pub fn reference_eval(p: &LengthPredictor, reqs: &[Request]) -> RefEval {
    let bounds = p.bucketing.boundaries();
    let n = reqs.len() as f64;
    let (mut e, mut o1, mut o2, mut sq) = (0.0, 0.0, 0.0, 0.0);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in reqs {
        let pb = p.predict_bucket(r);
        let tb = ref_bucket(bounds, r.true_output_len);
        let d = (pb as i64 - tb as i64).abs();
        e += (d == 0) as u8 as f64;
        o1 += (d <= 1) as u8 as f64;
        o2 += (d <= 2) as u8 as f64;
        let rep = ref_representative(bounds, pb);
        sq += (rep - r.true_output_len as f64).powi(2);
        xs.push(p.predict(r) as f64);
        ys.push(r.true_output_len as f64);
    }
    RefEval { exact: e / n, off1: o1 / n, off2: o2 / n, tau: tau_b_pairs(&xs, &ys), rmse: (sq / n).sqrt() }
}

pub fn corpus(lengths: &[u32]) -> Vec<Request> {
    lengths
        .iter()
        .enumerate()
        .map(|(i, &l)| Request {
            id: i as u64,
            arrival_time: 0.0,
            prompt_len: 1,
            true_output_len: l,
            ttft_slo: 1.0,
            tpot_slo: 1.0,
            category: 0,
        })
        .collect()
}

pub fn noisy_predictor(bucketing: Bucketing, seed: u64) -> LengthPredictor {
    LengthPredictor::noisy(bucketing, 0.35, 2, seed).unwrap()
}

// ---------------------------------------------------------------------------
// Six-request scenario with normalized costs

/// Decode step costs `0.25 * batch`; every prefill costs 1.
pub fn figure_cost() -> CostModel<f64> {
    CostModel {
        itl: ItlCoeffs::new(0.0, 0.25, 0.0, 0.0, 1.0).unwrap(),
        prefill: PrefillCoeffs::new(1.0, 1e9, 0.0, 0.0).unwrap(),
    }
}

/// Ids 0, 1, 3, 5 need one time unit per token, 2 and 4 tolerate two. All
/// arrive together; id 5 has the loosest first-token deadline.
pub fn figure_trace() -> Trace {
    let tpot = [1.0, 1.0, 2.0, 1.0, 2.0, 1.0];
    let ttft = [6.0, 6.0, 6.0, 6.0, 6.0, 6.5];
    Trace::new(
        (0..6)
            .map(|i| Request {
                id: i as u64,
                arrival_time: 0.0,
                prompt_len: 10,
                true_output_len: 5,
                ttft_slo: ttft[i],
                tpot_slo: tpot[i],
                category: 0,
            })
            .collect(),
    )
    .unwrap()
}

pub const TIGHT: [u64; 4] = [0, 1, 3, 5];
pub const LOOSE: [u64; 2] = [2, 4];

// ---------------------------------------------------------------------------
// Pinned overload scenario

pub const OVERLOAD_QPS: f64 = 34.0;
pub const OVERLOAD_SEED: u64 = 2024;
pub const OVERLOAD_REQUESTS: usize = 2000;

pub fn overload_cost() -> CostModel<f64> {
    CostModel {
        itl: ItlCoeffs::new(3e-7, 1.5e-4, 1e-6, 6e-3, 1.1).unwrap(),
        prefill: PrefillCoeffs::new(4e-3, 128.0, 3e-5, 0.0).unwrap(),
    }
}

pub fn overload_spec() -> WorkloadSpec {
    WorkloadSpec {
        qps: OVERLOAD_QPS,
        duration: 1.05 * OVERLOAD_REQUESTS as f64 / OVERLOAD_QPS,
        seed: OVERLOAD_SEED,
        prompt_len: LengthDist::LogNormal { mu: 5.0, sigma: 0.8 },
        output_len: LengthDist::LogNormal { mu: 4.8, sigma: 0.9 },
        category_weights: vec![1.0; 6],
        slo_table: SloCategoryTable::llama_8b(),
        max_len: 2048,
    }
}

pub fn overload_trace() -> Trace {
    let mut t = generate(&overload_spec()).unwrap();
    assert!(t.len() >= OVERLOAD_REQUESTS, "pinned spec produced only {} requests", t.len());
    t.requests.truncate(OVERLOAD_REQUESTS);
    t
}

/// Request throughput when decode runs at the largest batch whose step
/// still fits the strictest TPOT SLO, using the trace's mean lengths.
pub fn sustainable_rate(trace: &Trace, cost: &CostModel<f64>) -> f64 {
    let n = trace.len() as f64;
    let prompt = trace.requests.iter().map(|r| r.prompt_len as f64).sum::<f64>() / n;
    let output = trace.requests.iter().map(|r| r.true_output_len as f64).sum::<f64>() / n;
    let prefill = trace.requests.iter().map(|r| ref_prefill(&cost.prefill, r.prompt_len)).sum::<f64>() / n;
    let strictest = trace.requests.iter().map(|r| r.tpot_slo).fold(f64::INFINITY, f64::min);
    let l = prompt + output / 2.0;
    let mut b = 1.0;
    while ref_itl(&cost.itl, b + 1.0, l) <= strictest {
        b += 1.0;
    }
    1.0 / (prefill + output * ref_itl(&cost.itl, b, l) / b)
}
