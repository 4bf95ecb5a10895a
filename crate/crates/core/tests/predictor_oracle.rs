mod support;

use rand::Rng;
use slosim_core::predictor::{Bucketing, LengthPredictor};
use slosim_core::seed::rng;
use support::{corpus, noisy_predictor, reference_eval};

fn random_lengths(seed: u64, n: usize, max: u32) -> Vec<u32> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(1..=max)).collect()
}

/// Geometric-like lengths: many short outputs, a long tail.
fn skewed_lengths(seed: u64, n: usize) -> Vec<u32> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let u: f64 = r.random_range(1e-9..1.0);
            ((-u.ln() * 120.0).ceil() as u32).clamp(1, 2048)
        })
        .collect()
}

#[test]
fn metrics_match_brute_force_on_200_rows() {
    let reqs = corpus(&random_lengths(1, 200, 1000));
    for (i, b) in [
        Bucketing::equal_width(10, 1000).unwrap(),
        Bucketing::equal_frequency(10, 1000, &random_lengths(2, 500, 1000)).unwrap(),
    ]
    .into_iter()
    .enumerate()
    {
        let p = noisy_predictor(b, 40 + i as u64);
        let got = p.evaluate(&reqs).unwrap();
        let want = reference_eval(&p, &reqs);
        assert_eq!(got.exact_acc, want.exact);
        assert_eq!(got.off_by_n_acc[&1], want.off1);
        assert_eq!(got.off_by_n_acc[&2], want.off2);
        assert!((got.kendall_tau - want.tau).abs() <= 1e-12);
        assert_eq!(got.rmse_tokens, want.rmse);
        assert!(got.exact_acc < 1.0);
    }
}

#[test]
fn off_by_n_ordering_on_random_corpora() {
    for seed in 0..100 {
        let reqs = corpus(&random_lengths(seed, 50, 800));
        let p = noisy_predictor(Bucketing::equal_width(8, 800).unwrap(), seed);
        let e = p.evaluate(&reqs).unwrap();
        assert!(e.off_by_n_acc[&2] >= e.off_by_n_acc[&1]);
        assert!(e.off_by_n_acc[&1] >= e.exact_acc);
    }
}

#[test]
fn oracle_mode_is_perfect_on_buckets() {
    let reqs = corpus(&random_lengths(5, 120, 600));
    let p = LengthPredictor::oracle(Bucketing::equal_width(6, 600).unwrap());
    let e = p.evaluate(&reqs).unwrap();
    assert_eq!(e.exact_acc, 1.0);
    assert_eq!(e.kendall_tau, 1.0);
    assert_eq!(e.rmse_tokens, reference_eval(&p, &reqs).rmse);
    assert!(e.rmse_tokens > 0.0);
}

#[test]
fn equal_frequency_rmse_not_below_equal_width_on_skewed_lengths() {
    let train = skewed_lengths(10, 5000);
    let reqs = corpus(&skewed_lengths(11, 2000));
    let width = noisy_predictor(Bucketing::equal_width(10, 2048).unwrap(), 3);
    let freq = noisy_predictor(Bucketing::equal_frequency(10, 2048, &train).unwrap(), 3);
    let rw = width.evaluate(&reqs).unwrap().rmse_tokens;
    let rf = freq.evaluate(&reqs).unwrap().rmse_tokens;
    assert!(rf >= rw, "equal-frequency {rf} < equal-width {rw}");
}
