//! Output-length prediction.
//!
//! Schedulers consume a scalar predicted length `P(r)`. The predictor maps
//! lengths into buckets and answers with the bucket midpoint, optionally
//! perturbed by a controlled misclassification model. An oracle mode returns
//! the true length and isolates scheduling behaviour from prediction error.

use std::collections::BTreeMap;
use std::path::Path;

use log::debug;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed::{derive_seed_u64, rng};
use crate::slo::Request;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketStrategy {
    EqualWidth,
    EqualFrequency,
}

/// Partition of `(0, max_len]` into half-open buckets `(b[k-1], b[k]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucketing {
    pub strategy: BucketStrategy,
    pub num_buckets: usize,
    pub max_len: u32,
    /// Upper bounds, strictly increasing; the last one is `max_len`.
    boundaries: Vec<f64>,
}

impl Bucketing {
    pub fn equal_width(num_buckets: usize, max_len: u32) -> Result<Self> {
        if num_buckets == 0 || max_len == 0 {
            return Err(invalid("bucketing needs num_buckets >= 1 and max_len >= 1"));
        }
        let boundaries = (1..=num_buckets).map(|k| max_len as f64 * k as f64 / num_buckets as f64).collect();
        Ok(Bucketing { strategy: BucketStrategy::EqualWidth, num_buckets, max_len, boundaries })
    }

    /// Boundaries at the empirical `k/num_buckets` quantiles of `sample`.
    /// Repeated quantiles collapse, so heavily tied samples can yield fewer
    /// buckets than requested.
    pub fn equal_frequency(num_buckets: usize, max_len: u32, sample: &[u32]) -> Result<Self> {
        if num_buckets == 0 || max_len == 0 {
            return Err(invalid("bucketing needs num_buckets >= 1 and max_len >= 1"));
        }
        if sample.is_empty() {
            return Err(invalid("equal-frequency bucketing needs a training sample"));
        }
        let mut sorted = sample.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let max_len = max_len.max(sorted[n - 1]);
        let mut boundaries: Vec<f64> = Vec::with_capacity(num_buckets);
        for k in 1..num_buckets {
            let idx = (k * n).div_ceil(num_buckets) - 1;
            let q = sorted[idx] as f64;
            if q >= max_len as f64 {
                break;
            }
            if boundaries.last().is_none_or(|&last| q > last) {
                boundaries.push(q);
            }
        }
        boundaries.push(max_len as f64);
        Ok(Bucketing { strategy: BucketStrategy::EqualFrequency, num_buckets, max_len, boundaries })
    }

    /// Number of buckets actually in use.
    pub fn len(&self) -> usize {
        self.boundaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundaries.is_empty()
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn bucket_of(&self, length: u32) -> usize {
        if length > self.max_len {
            debug!("length {length} above max_len {}; clamped to last bucket", self.max_len);
            return self.len() - 1;
        }
        let l = length as f64;
        self.boundaries.partition_point(|&b| b < l).min(self.len() - 1)
    }

    /// Midpoint of the bucket, rounded up, at least one token.
    pub fn representative(&self, bucket: usize) -> Result<u32> {
        let hi = *self
            .boundaries
            .get(bucket)
            .ok_or_else(|| invalid(format!("bucket {bucket} out of range 0..{}", self.len())))?;
        let lo = if bucket == 0 { 0.0 } else { self.boundaries[bucket - 1] };
        Ok((((lo + hi) / 2.0).ceil() as u32).max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorMode {
    Oracle,
    NoisyBucket,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthPredictor {
    pub mode: PredictorMode,
    pub bucketing: Bucketing,
    /// Probability of answering with a wrong bucket.
    pub error_prob: f64,
    /// A wrong answer is off by 1..=error_spread buckets.
    pub error_spread: u32,
    pub seed: u64,
}

impl LengthPredictor {
    pub fn oracle(bucketing: Bucketing) -> Self {
        LengthPredictor { mode: PredictorMode::Oracle, bucketing, error_prob: 0.0, error_spread: 1, seed: 0 }
    }

    pub fn noisy(bucketing: Bucketing, error_prob: f64, error_spread: u32, seed: u64) -> Result<Self> {
        let p = LengthPredictor { mode: PredictorMode::NoisyBucket, bucketing, error_prob, error_spread, seed };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.error_prob) {
            return Err(invalid(format!("error_prob must be in [0,1], got {}", self.error_prob)));
        }
        if self.error_spread == 0 {
            return Err(invalid("error_spread must be >= 1"));
        }
        Ok(())
    }

    /// Bucket the predictor would answer with. Deterministic in `(seed, id)`.
    pub fn predict_bucket(&self, req: &Request) -> usize {
        let truth = self.bucketing.bucket_of(req.true_output_len);
        if self.mode == PredictorMode::Oracle || self.error_prob == 0.0 {
            return truth;
        }
        let mut r = rng(derive_seed_u64(self.seed, req.id));
        if !r.random_bool(self.error_prob) {
            return truth;
        }
        let k = r.random_range(1..=self.error_spread) as i64;
        let shift = if r.random_bool(0.5) { k } else { -k };
        (truth as i64 + shift).clamp(0, self.bucketing.len() as i64 - 1) as usize
    }

    pub fn predict(&self, req: &Request) -> u32 {
        match self.mode {
            PredictorMode::Oracle => req.true_output_len,
            PredictorMode::NoisyBucket => {
                let b = self.predict_bucket(req);
                self.bucketing.representative(b).expect("predicted bucket is in range")
            }
        }
    }

    pub fn evaluate(&self, requests: &[Request]) -> Result<PredictorEval> {
        if requests.len() < 2 {
            return Err(Error::TooFewForTau(requests.len()));
        }
        let n = requests.len() as f64;
        let mut exact = 0usize;
        let mut within = [0usize; 2];
        let mut sq_err = 0.0;
        let mut predicted = Vec::with_capacity(requests.len());
        let mut truth = Vec::with_capacity(requests.len());
        for req in requests {
            let p = self.predict(req);
            let pb = self.predict_bucket(req);
            let tb = self.bucketing.bucket_of(req.true_output_len);
            let d = pb.abs_diff(tb);
            exact += (d == 0) as usize;
            within[0] += (d <= 1) as usize;
            within[1] += (d <= 2) as usize;
            let rep = self.bucketing.representative(pb)? as f64;
            sq_err += (rep - req.true_output_len as f64).powi(2);
            predicted.push(p as f64);
            truth.push(req.true_output_len as f64);
        }
        let mut off_by_n_acc = BTreeMap::new();
        off_by_n_acc.insert(1, within[0] as f64 / n);
        off_by_n_acc.insert(2, within[1] as f64 / n);
        Ok(PredictorEval {
            exact_acc: exact as f64 / n,
            off_by_n_acc,
            kendall_tau: kendall_tau_b(&predicted, &truth)?,
            rmse_tokens: (sq_err / n).sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorEval {
    pub exact_acc: f64,
    /// Keyed by n: fraction of predictions within n buckets of the truth.
    pub off_by_n_acc: BTreeMap<u32, f64>,
    pub kendall_tau: f64,
    pub rmse_tokens: f64,
}

/// Kendall's tau-b in O(n log n) (Knight's merge-sort method).
///
/// Returns 0 when either series is constant, since the tie-corrected
/// denominator vanishes there.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { predicted: x.len(), observed: y.len() });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::TooFewForTau(n));
    }
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = (n as i128) * (n as i128 - 1) / 2;
    let ties =
        |runs: &mut dyn Iterator<Item = usize>| -> i128 { runs.map(|t| (t as i128) * (t as i128 - 1) / 2).sum() };
    let n1 = ties(&mut run_lengths(&pairs, |a, b| a.0 == b.0));
    let n3 = ties(&mut run_lengths(&pairs, |a, b| a.0 == b.0 && a.1 == b.1));

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let swaps = merge_count(&mut ys) as i128;
    let n2 = ties(&mut run_lengths(&ys, |a, b| a == b));

    let denom = ((n0 - n1) as f64) * ((n0 - n2) as f64);
    if denom <= 0.0 {
        return Ok(0.0);
    }
    let num = (n0 - n1 - n2 + n3 - 2 * swaps) as f64;
    Ok(num / denom.sqrt())
}

fn run_lengths<'a, T>(xs: &'a [T], same: impl Fn(&T, &T) -> bool + 'a) -> impl Iterator<Item = usize> + 'a {
    let mut i = 0;
    std::iter::from_fn(move || {
        if i >= xs.len() {
            return None;
        }
        let start = i;
        i += 1;
        while i < xs.len() && same(&xs[start], &xs[i]) {
            i += 1;
        }
        Some(i - start)
    })
}

/// Stable merge sort returning the number of inversions.
fn merge_count(xs: &mut [f64]) -> u64 {
    let n = xs.len();
    if n < 2 {
        return 0;
    }
    let mut buf = xs.to_vec();
    let mut swaps = 0u64;
    let mut width = 1;
    while width < n {
        let mut lo = 0;
        while lo < n {
            let mid = (lo + width).min(n);
            let hi = (lo + 2 * width).min(n);
            let (mut i, mut j, mut k) = (lo, mid, lo);
            while i < mid && j < hi {
                if xs[j] < xs[i] {
                    buf[k] = xs[j];
                    swaps += (mid - i) as u64;
                    j += 1;
                } else {
                    buf[k] = xs[i];
                    i += 1;
                }
                k += 1;
            }
            buf[k..k + (mid - i)].copy_from_slice(&xs[i..mid]);
            k += mid - i;
            buf[k..k + (hi - j)].copy_from_slice(&xs[j..hi]);
            lo = hi;
        }
        xs.copy_from_slice(&buf);
        width *= 2;
    }
    swaps
}

fn default_mode() -> PredictorMode {
    PredictorMode::Oracle
}

fn default_strategy() -> BucketStrategy {
    BucketStrategy::EqualWidth
}

fn default_buckets() -> usize {
    10
}

fn default_max_len() -> u32 {
    4096
}

fn default_spread() -> u32 {
    1
}

/// Predictor section of a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorConfig {
    #[serde(default = "default_mode")]
    pub mode: PredictorMode,
    #[serde(default = "default_strategy")]
    pub strategy: BucketStrategy,
    #[serde(default = "default_buckets")]
    pub num_buckets: usize,
    #[serde(default = "default_max_len")]
    pub max_len: u32,
    #[serde(default)]
    pub error_prob: f64,
    #[serde(default = "default_spread")]
    pub error_spread: u32,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            mode: default_mode(),
            strategy: default_strategy(),
            num_buckets: default_buckets(),
            max_len: default_max_len(),
            error_prob: 0.0,
            error_spread: default_spread(),
        }
    }
}

impl PredictorConfig {
    /// `sample` trains equal-frequency boundaries and is ignored otherwise.
    pub fn build(&self, sample: &[u32], seed: u64) -> Result<LengthPredictor> {
        let bucketing = match self.strategy {
            BucketStrategy::EqualWidth => Bucketing::equal_width(self.num_buckets, self.max_len)?,
            BucketStrategy::EqualFrequency => Bucketing::equal_frequency(self.num_buckets, self.max_len, sample)?,
        };
        match self.mode {
            PredictorMode::Oracle => Ok(LengthPredictor::oracle(bucketing)),
            PredictorMode::NoisyBucket => LengthPredictor::noisy(bucketing, self.error_prob, self.error_spread, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRow {
    pub prompt_len: u32,
    pub output_len: u32,
}

/// Read an evaluation corpus: one `{"prompt_len":..,"output_len":..}` per line.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusRow>> {
    let text = std::fs::read_to_string(path)?;
    parse_corpus(&text)
}

pub fn parse_corpus(text: &str) -> Result<Vec<CorpusRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: CorpusRow =
            serde_json::from_str(line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        if row.output_len == 0 {
            return Err(Error::Parse { line: i + 1, msg: "output_len must be >= 1".into() });
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Wrap corpus rows as requests (ids are row indices) so they can be fed to
/// [`LengthPredictor::evaluate`].
pub fn corpus_requests(rows: &[CorpusRow]) -> Vec<Request> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| Request {
            id: i as u64,
            arrival_time: 0.0,
            prompt_len: r.prompt_len.max(1),
            true_output_len: r.output_len,
            ttft_slo: 1.0,
            tpot_slo: 1.0,
            category: 0,
        })
        .collect()
}
