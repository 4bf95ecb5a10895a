//! Synthetic workloads and trace files.
//!
//! Synthetic arrivals are Poisson: exponential gaps at rate `qps` until
//! `duration`. Each request draws a category by weight and copies that
//! category's SLOs; lengths come from the configured distributions. Every
//! quantity has its own RNG stream derived from the spec seed.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed::{derive_seed, rng};
use crate::slo::{Request, SloCategoryTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LengthDist {
    /// Token count `exp(N(mu, sigma^2))`, rounded.
    LogNormal {
        mu: f64,
        sigma: f64,
    },
    /// Inclusive integer range.
    Uniform {
        low: u32,
        high: u32,
    },
    /// Resampled from a file with one length per line.
    Empirical {
        path: PathBuf,
    },
    Constant {
        value: u32,
    },
}

enum LengthSampler {
    LogNormal(LogNormal<f64>),
    Uniform(u32, u32),
    Empirical(Vec<u32>),
    Constant(u32),
}

impl LengthDist {
    fn sampler(&self) -> Result<LengthSampler> {
        Ok(match self {
            LengthDist::LogNormal { mu, sigma } => {
                if !mu.is_finite() || !(*sigma >= 0.0) || !sigma.is_finite() {
                    return Err(invalid(format!("lognormal needs finite mu and sigma >= 0, got ({mu}, {sigma})")));
                }
                LengthSampler::LogNormal(LogNormal::new(*mu, *sigma).map_err(|e| invalid(format!("lognormal: {e}")))?)
            }
            LengthDist::Uniform { low, high } => {
                if low > high {
                    return Err(invalid(format!("uniform needs low <= high, got [{low}, {high}]")));
                }
                LengthSampler::Uniform(*low, *high)
            }
            LengthDist::Empirical { path } => {
                let text = std::fs::read_to_string(path)?;
                let mut values = Vec::new();
                for (i, line) in text.lines().enumerate() {
                    let line = line.trim();
                    if line.is_empty() {
                        continue;
                    }
                    values.push(
                        line.parse::<u32>()
                            .map_err(|e| Error::Parse { line: i + 1, msg: format!("{}: {e}", path.display()) })?,
                    );
                }
                if values.is_empty() {
                    return Err(invalid(format!("{} holds no lengths", path.display())));
                }
                LengthSampler::Empirical(values)
            }
            LengthDist::Constant { value } => LengthSampler::Constant(*value),
        })
    }
}

impl LengthSampler {
    fn sample<R: Rng>(&self, r: &mut R, max_len: u32) -> u32 {
        let raw = match self {
            LengthSampler::LogNormal(d) => d.sample(r).round().min(u32::MAX as f64) as u32,
            LengthSampler::Uniform(lo, hi) => r.random_range(*lo..=*hi),
            LengthSampler::Empirical(v) => v[r.random_range(0..v.len())],
            LengthSampler::Constant(c) => *c,
        };
        raw.clamp(1, max_len.max(1))
    }
}

fn default_max_len() -> u32 {
    8192
}

fn default_weights() -> Vec<f64> {
    vec![1.0; 6]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub qps: f64,
    /// Seconds of arrivals.
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    pub prompt_len: LengthDist,
    pub output_len: LengthDist,
    /// One weight per table category, in table order.
    #[serde(default = "default_weights")]
    pub category_weights: Vec<f64>,
    #[serde(default)]
    pub slo_table: SloCategoryTable,
    /// Sampled lengths are clamped to `1..=max_len`.
    #[serde(default = "default_max_len")]
    pub max_len: u32,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.qps > 0.0) || !self.qps.is_finite() {
            return Err(invalid(format!("qps must be positive, got {}", self.qps)));
        }
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return Err(invalid(format!("duration must be finite and >= 0, got {}", self.duration)));
        }
        self.slo_table.validate()?;
        if self.category_weights.len() != self.slo_table.categories.len() {
            return Err(invalid(format!(
                "{} category weights for {} table categories",
                self.category_weights.len(),
                self.slo_table.categories.len()
            )));
        }
        if self.category_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(invalid("category weights must be finite and non-negative"));
        }
        if !(self.category_weights.iter().sum::<f64>() > 0.0) {
            return Err(invalid("category weights must not all be zero"));
        }
        Ok(())
    }
}

/// Requests in arrival order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub requests: Vec<Request>,
}

impl Trace {
    pub fn new(requests: Vec<Request>) -> Result<Self> {
        let t = Trace { requests };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::with_capacity(self.requests.len());
        for (i, r) in self.requests.iter().enumerate() {
            r.validate()?;
            if !ids.insert(r.id) {
                return Err(invalid(format!("duplicate request id {}", r.id)));
            }
            if i > 0 && r.arrival_time < self.requests[i - 1].arrival_time {
                return Err(invalid(format!("request {} arrives before its predecessor", r.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    /// Time of the last arrival.
    pub fn span(&self) -> f64 {
        self.requests.last().map_or(0.0, |r| r.arrival_time)
    }

    /// Mean arrival rate over the trace span; `None` when undefined.
    pub fn mean_qps(&self) -> Option<f64> {
        let span = self.span();
        (span > 0.0 && self.len() > 1).then(|| self.len() as f64 / span)
    }
}

/// Draw a Poisson workload from `spec`.
pub fn generate(spec: &WorkloadSpec) -> Result<Trace> {
    spec.validate()?;
    let gaps = Exp::new(spec.qps).map_err(|e| invalid(format!("exponential: {e}")))?;
    let cats = WeightedIndex::new(&spec.category_weights).map_err(|e| invalid(format!("category weights: {e}")))?;
    let prompt = spec.prompt_len.sampler()?;
    let output = spec.output_len.sampler()?;

    let mut arrival_rng = rng(derive_seed(spec.seed, "arrivals"));
    let mut category_rng = rng(derive_seed(spec.seed, "category"));
    let mut prompt_rng = rng(derive_seed(spec.seed, "prompt_len"));
    let mut output_rng = rng(derive_seed(spec.seed, "output_len"));

    let mut requests = Vec::new();
    let mut t = 0.0;
    loop {
        t += gaps.sample(&mut arrival_rng);
        if t >= spec.duration {
            break;
        }
        let cat = &spec.slo_table.categories[cats.sample(&mut category_rng)];
        requests.push(Request {
            id: requests.len() as u64,
            arrival_time: t,
            prompt_len: prompt.sample(&mut prompt_rng, spec.max_len),
            true_output_len: output.sample(&mut output_rng, spec.max_len),
            ttft_slo: cat.ttft_slo,
            tpot_slo: cat.tpot_slo,
            category: cat.id,
        });
    }
    Ok(Trace { requests })
}

/// Divide every arrival time by `factor`; `factor > 1` compresses the trace
/// and raises the offered load.
pub fn rescale_arrivals(trace: &Trace, factor: f64) -> Result<Trace> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(invalid(format!("rescale factor must be positive, got {factor}")));
    }
    let requests =
        trace.requests.iter().map(|r| Request { arrival_time: r.arrival_time / factor, ..r.clone() }).collect();
    Ok(Trace { requests })
}

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceRecord {
    id: u64,
    arrival_s: f64,
    prompt_len: u32,
    output_len: u32,
    ttft_slo_s: f64,
    tpot_slo_ms: f64,
    #[serde(default)]
    category: u8,
}

impl From<&Request> for TraceRecord {
    fn from(r: &Request) -> Self {
        TraceRecord {
            id: r.id,
            arrival_s: r.arrival_time,
            prompt_len: r.prompt_len,
            output_len: r.true_output_len,
            ttft_slo_s: r.ttft_slo,
            tpot_slo_ms: r.tpot_slo * 1e3,
            category: r.category,
        }
    }
}

impl From<TraceRecord> for Request {
    fn from(t: TraceRecord) -> Self {
        Request {
            id: t.id,
            arrival_time: t.arrival_s,
            prompt_len: t.prompt_len,
            true_output_len: t.output_len,
            ttft_slo: t.ttft_slo_s,
            tpot_slo: t.tpot_slo_ms / 1e3,
            category: t.category,
        }
    }
}

pub fn write_trace<W: Write>(mut w: W, trace: &Trace) -> Result<()> {
    for r in &trace.requests {
        serde_json::to_writer(&mut w, &TraceRecord::from(r))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_trace(std::io::BufWriter::new(f), trace)
}

pub fn read_trace<R: Read>(reader: R) -> Result<Trace> {
    let mut requests: Vec<Request> = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?;
        let req = Request::from(rec);
        req.validate().map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?;
        if let Some(prev) = requests.last() {
            if req.arrival_time < prev.arrival_time {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("arrival {} goes backwards (previous {})", req.arrival_time, prev.arrival_time),
                });
            }
        }
        if !ids.insert(req.id) {
            return Err(Error::Parse { line: line_no, msg: format!("duplicate id {}", req.id) });
        }
        requests.push(req);
    }
    Ok(Trace { requests })
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace> {
    read_trace(std::fs::File::open(path)?)
}

/// Which CSV columns hold the timestamp and token counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub timestamp: String,
    pub prompt: String,
    pub output: String,
}

impl ColumnMap {
    /// Parse `timestamp=<col>,prompt=<col>,output=<col>`.
    pub fn parse(s: &str) -> Result<Self> {
        let (mut ts, mut pr, mut out) = (None, None, None);
        for part in s.split(',') {
            let (k, v) =
                part.split_once('=').ok_or_else(|| invalid(format!("column map entry `{part}` is not key=value")))?;
            let v = v.trim().to_string();
            match k.trim() {
                "timestamp" => ts = Some(v),
                "prompt" => pr = Some(v),
                "output" => out = Some(v),
                other => return Err(invalid(format!("unknown column map key `{other}`"))),
            }
        }
        Ok(ColumnMap {
            timestamp: ts.ok_or_else(|| invalid("column map lacks `timestamp`"))?,
            prompt: pr.ok_or_else(|| invalid("column map lacks `prompt`"))?,
            output: out.ok_or_else(|| invalid("column map lacks `output`"))?,
        })
    }
}

/// How converted requests get their SLOs.
#[derive(Debug, Clone, PartialEq)]
pub struct SloAssignment {
    pub table: SloCategoryTable,
    pub weights: Vec<f64>,
    pub seed: u64,
}

/// Seconds since the Unix epoch for `YYYY-MM-DD[ T]HH:MM:SS[.frac]`, or a
/// plain number of seconds.
pub fn parse_timestamp(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(x) = s.parse::<f64>() {
        return Some(x);
    }
    let (date, time) = s.split_once([' ', 'T'])?;
    let mut d = date.split('-');
    let y: i64 = d.next()?.parse().ok()?;
    let m: i64 = d.next()?.parse().ok()?;
    let day: i64 = d.next()?.parse().ok()?;
    let time = time.trim_end_matches('Z');
    let mut t = time.split(':');
    let hh: f64 = t.next()?.parse().ok()?;
    let mm: f64 = t.next()?.parse().ok()?;
    let ss: f64 = t.next()?.parse().ok()?;
    if !(1..=12).contains(&m) || !(1..=31).contains(&day) {
        return None;
    }
    // Days from civil date (proleptic Gregorian).
    let y = if m <= 2 { y - 1 } else { y };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let mp = (m + 9) % 12;
    let doy = (153 * mp + 2) / 5 + day - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    let days = era * 146_097 + doe - 719_468;
    Some(days as f64 * 86_400.0 + hh * 3600.0 + mm * 60.0 + ss)
}

/// Convert a CSV request log into a trace. Arrivals are made relative to the
/// earliest timestamp and rows are stably sorted by time.
pub fn convert_csv<R: Read>(reader: R, map: &ColumnMap, slo: &SloAssignment) -> Result<Trace> {
    slo.table.validate()?;
    if slo.weights.len() != slo.table.categories.len() {
        return Err(invalid("one category weight per table category is required"));
    }
    let cats = WeightedIndex::new(&slo.weights).map_err(|e| invalid(format!("category weights: {e}")))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.to_string()));
    let (ti, pi, oi) = (col(&map.timestamp)?, col(&map.prompt)?, col(&map.output)?);

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let get = |k: usize| rec.get(k).unwrap_or("");
        let ts = parse_timestamp(get(ti))
            .ok_or_else(|| Error::Parse { line, msg: format!("bad timestamp `{}`", get(ti)) })?;
        let prompt: u32 = get(pi).parse().map_err(|e| Error::Parse { line, msg: format!("prompt: {e}") })?;
        let output: u32 = get(oi).parse().map_err(|e| Error::Parse { line, msg: format!("output: {e}") })?;
        rows.push((ts, prompt.max(1), output.max(1)));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let t0 = rows.first().map_or(0.0, |r| r.0);
    let mut r = rng(derive_seed(slo.seed, "category"));
    let requests = rows
        .into_iter()
        .enumerate()
        .map(|(i, (ts, prompt, output))| {
            let cat = &slo.table.categories[cats.sample(&mut r)];
            Request {
                id: i as u64,
                arrival_time: ts - t0,
                prompt_len: prompt,
                true_output_len: output,
                ttft_slo: cat.ttft_slo,
                tpot_slo: cat.tpot_slo,
                category: cat.id,
            }
        })
        .collect();
    Ok(Trace { requests })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn spec(qps: f64, duration: f64, seed: u64) -> WorkloadSpec {
        WorkloadSpec {
            qps,
            duration,
            seed,
            prompt_len: LengthDist::LogNormal { mu: 5.0, sigma: 0.8 },
            output_len: LengthDist::Uniform { low: 1, high: 400 },
            category_weights: vec![1.0; 6],
            slo_table: SloCategoryTable::llama_8b(),
            max_len: 4096,
        }
    }

    #[test]
    fn poisson_count_near_rate() {
        let t = generate(&spec(2.0, 1000.0, 5)).unwrap();
        let n = t.len() as f64;
        assert!((n - 2000.0).abs() <= 100.0, "count {n}");
        // Pinned for the current RNG streams.
        assert_eq!(t.len(), 2006);
        t.validate().unwrap();
    }

    #[test]
    fn single_category_copies_table_slos() {
        let mut s = spec(5.0, 50.0, 1);
        s.category_weights = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let t = generate(&s).unwrap();
        assert!(!t.is_empty());
        for r in &t.requests {
            assert_eq!(r.category, 1);
            assert_eq!(r.ttft_slo, 0.5);
            assert_eq!(r.tpot_slo, 0.030);
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let a = generate(&spec(3.0, 100.0, 11)).unwrap();
        let b = generate(&spec(3.0, 100.0, 11)).unwrap();
        assert_eq!(a, b);
        let c = generate(&spec(3.0, 100.0, 12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn category_frequencies_follow_weights() {
        let mut s = spec(100.0, 100.0, 3);
        s.category_weights = vec![1.0, 2.0, 3.0, 4.0, 0.0, 10.0];
        let t = generate(&s).unwrap();
        let n = t.len() as f64;
        assert!(n > 9000.0);
        let total: f64 = s.category_weights.iter().sum();
        let mut counts = [0f64; 6];
        for r in &t.requests {
            counts[r.category as usize - 1] += 1.0;
        }
        assert_eq!(counts[4], 0.0);
        let chi2: f64 = s
            .category_weights
            .iter()
            .zip(counts)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, c)| {
                let e = n * w / total;
                (c - e).powi(2) / e
            })
            .sum();
        // 4 degrees of freedom; the 0.999 quantile is 18.47.
        assert!(chi2 < 18.47, "chi2 {chi2}");
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = spec(0.0, 10.0, 1);
        assert!(generate(&s).is_err());
        s.qps = 1.0;
        s.category_weights = vec![0.0; 6];
        assert!(generate(&s).is_err());
        s.category_weights = vec![1.0; 5];
        assert!(generate(&s).is_err());
        s.category_weights = vec![1.0; 6];
        s.prompt_len = LengthDist::LogNormal { mu: 1.0, sigma: -1.0 };
        assert!(generate(&s).is_err());
        s.prompt_len = LengthDist::Uniform { low: 5, high: 2 };
        assert!(generate(&s).is_err());
    }

    #[test]
    fn trace_file_roundtrip_and_errors() {
        let t = Trace::new(vec![
            Request {
                id: 0,
                arrival_time: 0.0,
                prompt_len: 10,
                true_output_len: 5,
                ttft_slo: 0.5,
                tpot_slo: 0.03,
                category: 1,
            },
            Request {
                id: 1,
                arrival_time: 0.25,
                prompt_len: 300,
                true_output_len: 1,
                ttft_slo: 2.0,
                tpot_slo: 0.05,
                category: 4,
            },
            Request {
                id: 2,
                arrival_time: 1.125,
                prompt_len: 1,
                true_output_len: 900,
                ttft_slo: 7.5,
                tpot_slo: 0.05,
                category: 6,
            },
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &t).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"id\":0,\"arrival_s\":0.0,\"prompt_len\":10,\"output_len\":5,\"ttft_slo_s\":0.5,\"tpot_slo_ms\":30.0,\"category\":1}"));
        assert_eq!(read_trace(buf.as_slice()).unwrap(), t);

        let backwards = "{\"id\":0,\"arrival_s\":1.0,\"prompt_len\":1,\"output_len\":1,\"ttft_slo_s\":1,\"tpot_slo_ms\":30}\n\
                         {\"id\":1,\"arrival_s\":0.5,\"prompt_len\":1,\"output_len\":1,\"ttft_slo_s\":1,\"tpot_slo_ms\":30}\n";
        assert!(matches!(read_trace(backwards.as_bytes()), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(read_trace("not json\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
        assert!(read_trace("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn rescale_examples() {
        let t = generate(&spec(2.0, 30.0, 5)).unwrap();
        assert_eq!(rescale_arrivals(&t, 1.0).unwrap(), t);
        let fast = rescale_arrivals(&t, 2.0).unwrap();
        let slow = rescale_arrivals(&t, 0.5).unwrap();
        for ((a, f), s) in t.requests.iter().zip(&fast.requests).zip(&slow.requests) {
            assert_eq!(f.arrival_time, a.arrival_time / 2.0);
            assert_eq!(s.arrival_time, a.arrival_time * 2.0);
            assert_eq!(f.prompt_len, a.prompt_len);
            assert_eq!(f.tpot_slo, a.tpot_slo);
        }
        assert!(rescale_arrivals(&t, 0.0).is_err());
    }

    #[test]
    fn csv_conversion() {
        let csv_text = "TIMESTAMP,ContextTokens,GeneratedTokens\n\
                        2023-11-16 18:15:47.5,100,20\n\
                        2023-11-16 18:15:46.0,50,0\n\
                        2023-11-16 18:16:46.0,7,3\n";
        let map = ColumnMap::parse("timestamp=TIMESTAMP,prompt=ContextTokens,output=GeneratedTokens").unwrap();
        let slo = SloAssignment { table: SloCategoryTable::llama_8b(), weights: vec![1.0; 6], seed: 1 };
        let t = convert_csv(csv_text.as_bytes(), &map, &slo).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.requests[0].arrival_time, 0.0);
        assert_eq!(t.requests[0].prompt_len, 50);
        assert_eq!(t.requests[0].true_output_len, 1);
        assert!((t.requests[1].arrival_time - 1.5).abs() < 1e-9);
        assert!((t.requests[2].arrival_time - 60.0).abs() < 1e-9);
        t.validate().unwrap();

        let bad_map = ColumnMap::parse("timestamp=ts,prompt=ContextTokens,output=GeneratedTokens").unwrap();
        assert!(matches!(convert_csv(csv_text.as_bytes(), &bad_map, &slo), Err(Error::MissingColumn(c)) if c == "ts"));
        assert!(ColumnMap::parse("timestamp=a,prompt=b").is_err());
    }

    #[test]
    fn timestamp_parsing() {
        assert_eq!(parse_timestamp("12.5"), Some(12.5));
        assert_eq!(parse_timestamp("1970-01-01 00:00:00"), Some(0.0));
        assert_eq!(parse_timestamp("1970-01-02T00:00:01.5"), Some(86_401.5));
        assert_eq!(parse_timestamp("2000-03-01 00:00:00"), Some(951_868_800.0));
        assert_eq!(parse_timestamp("garbage"), None);
    }

    proptest! {
        #[test]
        fn trace_roundtrip(raw in proptest::collection::vec(
            (0u32..100_000, 1u32..5000, 1u32..5000, 1u32..20_000, 1u32..2000, 0u8..7), 0..40)) {
            let mut t = 0.0;
            let requests: Vec<Request> = raw.iter().enumerate().map(|(i, &(gap, p, o, ttft_ms, tpot_ms, c))| {
                t += gap as f64 / 997.0;
                Request {
                    id: i as u64 * 3,
                    arrival_time: t,
                    prompt_len: p,
                    true_output_len: o,
                    ttft_slo: ttft_ms as f64 / 1000.0,
                    tpot_slo: tpot_ms as f64 / 1000.0,
                    category: c,
                }
            }).collect();
            let trace = Trace::new(requests).unwrap();
            let mut buf = Vec::new();
            write_trace(&mut buf, &trace).unwrap();
            prop_assert_eq!(read_trace(buf.as_slice()).unwrap(), trace);
        }

        #[test]
        fn rescale_preserves_everything_but_time(seed in 0u64..1000, factor in 0.1f64..10.0) {
            let t = generate(&spec(4.0, 10.0, seed)).unwrap();
            let r = rescale_arrivals(&t, factor).unwrap();
            prop_assert_eq!(r.len(), t.len());
            for (a, b) in t.requests.iter().zip(&r.requests) {
                prop_assert_eq!(Request { arrival_time: 0.0, ..a.clone() }, Request { arrival_time: 0.0, ..b.clone() });
            }
        }
    }
}
