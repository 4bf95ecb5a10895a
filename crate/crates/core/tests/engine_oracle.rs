mod support;

use proptest::prelude::*;
use slosim_core::engine::run;
use slosim_core::predictor::{Bucketing, LengthPredictor};
use slosim_core::sched::{BaselineConfig, BaselineKind, BaselinePolicy, Policy, ScorpioConfig, ScorpioPolicy};
use slosim_core::slo::{Request, RequestOutcome};
use slosim_core::workload::Trace;
use slosim_core::RunOptions;
use support::{reference_run, small_cost, RefOutcome, RefPolicy};

fn oracle() -> LengthPredictor {
    LengthPredictor::oracle(Bucketing::equal_width(8, 64).unwrap())
}

fn engine_policy(p: RefPolicy) -> Box<dyn Policy> {
    let cost = small_cost();
    match p {
        RefPolicy::Greedy { cap, prefill_priority } => Box::new(
            BaselinePolicy::new(
                BaselineConfig { policy: BaselineKind::GreedyFcfs, max_batch_size: cap, prefill_priority },
                cost.prefill,
                oracle(),
            )
            .unwrap(),
        ),
        RefPolicy::Scorpio { cap } => Box::new(
            ScorpioPolicy::new(
                ScorpioConfig { max_running: cap, ..Default::default() },
                cost.itl,
                cost.prefill,
                oracle(),
            )
            .unwrap(),
        ),
    }
}

fn same(o: &RequestOutcome, r: &RefOutcome) -> bool {
    let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-9,
        (None, None) => true,
        _ => false,
    };
    o.status.as_str() == r.status && close(o.ttft, r.ttft) && close(o.tpot, r.tpot)
}

fn small_trace() -> impl Strategy<Value = Vec<Request>> {
    proptest::collection::vec(
        (0u32..8, 1u32..12, 1u32..7, 2u32..24, prop::sample::select(vec![2.0, 3.0, 5.0, 8.0])),
        1..=10,
    )
    .prop_map(|rows| {
        let mut t = 0.0;
        rows.into_iter()
            .enumerate()
            .map(|(i, (gap, prompt, out, ttft, tpot))| {
                t += gap as f64 * 0.5;
                Request {
                    id: i as u64,
                    arrival_time: t,
                    prompt_len: prompt,
                    true_output_len: out,
                    ttft_slo: ttft as f64,
                    tpot_slo: tpot,
                    category: 0,
                }
            })
            .collect()
    })
}

fn check(reqs: Vec<Request>, p: RefPolicy) -> Result<(), TestCaseError> {
    let trace = Trace::new(reqs).unwrap();
    let want = reference_run(&trace.requests, &small_cost(), p);
    let mut pol = engine_policy(p);
    let got = run(&trace, &small_cost(), pol.as_mut(), &RunOptions::default()).unwrap();
    prop_assert_eq!(want.len(), trace.len());
    for o in &got.outcomes {
        let r = &want[&o.id];
        prop_assert!(same(o, r), "request {}: engine {:?} vs reference {:?}", o.id, o, r);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn greedy_matches_reference(reqs in small_trace(), cap in 1usize..5, pp in any::<bool>()) {
        check(reqs, RefPolicy::Greedy { cap, prefill_priority: pp })?;
    }

    #[test]
    fn scorpio_matches_reference(reqs in small_trace(), cap in 1usize..6) {
        check(reqs, RefPolicy::Scorpio { cap })?;
    }
}
