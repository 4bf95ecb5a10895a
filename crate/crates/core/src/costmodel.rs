//! Analytic latency models for prefill and decode, the admission-time
//! estimators built on them, and least-squares fitting from profile data.
//!
//! Decode iteration latency is bilinear in batch size `B` and average
//! sequence length `L`:
//!
//! ```text
//! itl(B, L) = alpha*B*L + beta*B + gamma*L + delta
//! ```
//!
//! Prefill latency is flat up to a knee `theta` and affine above it. All
//! coefficients are in seconds (and tokens) internally; the JSON parameter
//! file and the profile CSV use milliseconds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Decode-step model coefficients plus the inefficiency factor applied by
/// the TPOT estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItlCoeffs<T> {
    /// s / (request * token)
    pub alpha: T,
    /// s / request
    pub beta: T,
    /// s / token
    pub gamma: T,
    /// s
    pub delta: T,
    /// Dimensionless, >= 1.
    pub epsilon: T,
}

pub const DEFAULT_EPSILON: f64 = 1.1;
pub const DEFAULT_THETA: f64 = 128.0;

impl<T: Scalar> ItlCoeffs<T> {
    pub fn new(alpha: T, beta: T, gamma: T, delta: T, epsilon: T) -> Result<Self> {
        let c = ItlCoeffs { alpha, beta, gamma, delta, epsilon };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma, self.delta, self.epsilon];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(invalid("ITL coefficients must be finite"));
        }
        if self.epsilon < T::one() {
            return Err(invalid(format!("epsilon must be >= 1, got {}", self.epsilon)));
        }
        Ok(())
    }

    /// Latency of one decode iteration for a batch of `batch_size` requests
    /// (possibly fractional) with mean length `avg_len`.
    pub fn itl(&self, batch_size: T, avg_len: T) -> Result<T> {
        if !(batch_size > T::zero()) || !(avg_len > T::zero()) {
            return Err(invalid(format!("itl needs positive batch size and length, got B={batch_size} L={avg_len}")));
        }
        Ok(self.alpha * batch_size * avg_len + self.beta * batch_size + self.gamma * avg_len + self.delta)
    }

    /// Conservative batch TPOT over the next `predicted_len` steps if every
    /// current member keeps running that long: lengths grow by `P/2` on
    /// average, and the result is inflated by `epsilon`.
    pub fn estimated_tpot(&self, vbs: T, avg_len: T, predicted_len: T) -> Result<T> {
        if !(vbs > T::zero()) || !(avg_len > T::zero()) || !(predicted_len >= T::one()) {
            return Err(invalid(format!("estimated_tpot domain: vbs={vbs} L={avg_len} P={predicted_len}")));
        }
        Ok(self.estimated_tpot_unchecked(vbs, avg_len, predicted_len))
    }

    #[inline]
    pub(crate) fn estimated_tpot_unchecked(&self, vbs: T, avg_len: T, predicted_len: T) -> T {
        let two = T::one() + T::one();
        self.epsilon
            * ((self.alpha * vbs + self.gamma) * (avg_len + predicted_len / two) + self.beta * vbs + self.delta)
    }

    pub fn cast<U: Scalar>(&self) -> ItlCoeffs<U> {
        ItlCoeffs {
            alpha: U::of(self.alpha.to_f64_lossy()),
            beta: U::of(self.beta.to_f64_lossy()),
            gamma: U::of(self.gamma.to_f64_lossy()),
            delta: U::of(self.delta.to_f64_lossy()),
            epsilon: U::of(self.epsilon.to_f64_lossy()),
        }
    }
}

/// Piecewise prefill model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrefillCoeffs<T> {
    /// Flat prefill time (s) for prompts up to `theta` tokens.
    pub phi: T,
    /// Knee, tokens.
    pub theta: T,
    /// s / token above the knee.
    pub alpha_p: T,
    /// s
    pub beta_p: T,
}

impl<T: Scalar> PrefillCoeffs<T> {
    pub fn new(phi: T, theta: T, alpha_p: T, beta_p: T) -> Result<Self> {
        let c = PrefillCoeffs { phi, theta, alpha_p, beta_p };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phi > T::zero()) {
            return Err(invalid("phi must be positive"));
        }
        if !(self.theta >= T::zero()) {
            return Err(invalid("theta must be >= 0"));
        }
        if !(self.alpha_p * self.theta + self.beta_p >= T::zero()) {
            return Err(invalid("alpha_p * theta + beta_p must be >= 0"));
        }
        Ok(())
    }

    pub fn prefill_time(&self, prompt_len: u32) -> Result<T> {
        if prompt_len == 0 {
            return Err(invalid("prompt_len must be >= 1"));
        }
        Ok(self.prefill_time_unchecked(prompt_len))
    }

    #[inline]
    pub(crate) fn prefill_time_unchecked(&self, prompt_len: u32) -> T {
        let l = T::of_count(prompt_len as usize);
        if l <= self.theta {
            self.phi
        } else {
            self.alpha_p * l + self.beta_p
        }
    }

    /// Lower bound on TTFT for the last prompt in `queue_ahead`: time already
    /// waited plus the prefill of everything up to and including it.
    pub fn estimated_ttft(&self, queue_ahead: &[u32], elapsed_wait: T) -> Result<T> {
        if queue_ahead.is_empty() {
            return Err(invalid("estimated_ttft needs the request's own prompt in the queue"));
        }
        let mut total = elapsed_wait;
        for &p in queue_ahead {
            total += self.prefill_time(p)?;
        }
        Ok(total)
    }

    pub fn cast<U: Scalar>(&self) -> PrefillCoeffs<U> {
        PrefillCoeffs {
            phi: U::of(self.phi.to_f64_lossy()),
            theta: U::of(self.theta.to_f64_lossy()),
            alpha_p: U::of(self.alpha_p.to_f64_lossy()),
            beta_p: U::of(self.beta_p.to_f64_lossy()),
        }
    }
}

/// Both halves of the cost model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel<T> {
    pub itl: ItlCoeffs<T>,
    pub prefill: PrefillCoeffs<T>,
}

impl<T: Scalar> CostModel<T> {
    pub fn validate(&self) -> Result<()> {
        self.itl.validate()?;
        self.prefill.validate()
    }
}

/// Goodness of fit between a model and observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitQuality<T> {
    pub r2: T,
    /// Same unit as the inputs.
    pub rmse: T,
    /// Percent.
    pub mape: T,
}

/// R², RMSE and MAPE of `predicted` against `observed`.
///
/// A constant observed series has no variance; R² is then 1 for a perfect
/// prediction and 0 otherwise.
pub fn fit_quality<T: Scalar>(predicted: &[T], observed: &[T]) -> Result<FitQuality<T>> {
    if predicted.len() != observed.len() {
        return Err(Error::LengthMismatch { predicted: predicted.len(), observed: observed.len() });
    }
    if observed.is_empty() {
        return Err(invalid("fit_quality needs at least one observation"));
    }
    let n = T::of_count(observed.len());
    let mean = observed.iter().copied().sum::<T>() / n;
    let mut ss_res = T::zero();
    let mut ss_tot = T::zero();
    let mut ape = T::zero();
    for (i, (&p, &o)) in predicted.iter().zip(observed).enumerate() {
        if o == T::zero() {
            return Err(Error::ZeroObserved { index: i });
        }
        let e = p - o;
        ss_res += e * e;
        ss_tot += (o - mean) * (o - mean);
        ape += (e / o).abs();
    }
    let r2 = if ss_tot > T::zero() {
        T::one() - ss_res / ss_tot
    } else if ss_res == T::zero() {
        T::one()
    } else {
        T::zero()
    };
    Ok(FitQuality { r2, rmse: (ss_res / n).sqrt(), mape: ape / n * T::of(100.0) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Decode,
    Prefill,
}

/// One profiled step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSample {
    pub kind: SampleKind,
    pub batch_size: u32,
    pub avg_seq_len: f64,
    /// Prefill rows only.
    pub prompt_len: Option<u32>,
    /// Seconds.
    pub observed_latency: f64,
}

impl ProfileSample {
    pub fn decode(batch_size: u32, avg_seq_len: f64, latency_s: f64) -> Self {
        ProfileSample {
            kind: SampleKind::Decode,
            batch_size,
            avg_seq_len,
            prompt_len: None,
            observed_latency: latency_s,
        }
    }

    pub fn prefill(prompt_len: u32, latency_s: f64) -> Self {
        ProfileSample {
            kind: SampleKind::Prefill,
            batch_size: 1,
            avg_seq_len: prompt_len as f64,
            prompt_len: Some(prompt_len),
            observed_latency: latency_s,
        }
    }
}

/// Least squares by Householder QR.
///
/// `rows` holds the design matrix row by row. Fails when a column is
/// (numerically) a combination of the columns before it.
fn least_squares<T: Scalar>(rows: &[Vec<T>], y: &[T], names: &[&str]) -> Result<Vec<T>> {
    let m = rows.len();
    let n = names.len();
    if m < n {
        return Err(Error::RankDeficient(format!("{m} samples cannot determine {n} coefficients")));
    }
    let mut cols: Vec<Vec<T>> = (0..n).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let col_norms: Vec<T> = cols.iter().map(|c| c.iter().map(|&x| x * x).sum::<T>().sqrt()).collect();
    let mut b = y.to_vec();
    let tol = T::epsilon().sqrt() * T::of_count(m);
    let mut diag = vec![T::zero(); n];

    for k in 0..n {
        let norm = cols[k][k..].iter().map(|&x| x * x).sum::<T>().sqrt();
        if !(norm > tol * col_norms[k]) || col_norms[k] == T::zero() {
            return Err(Error::RankDeficient(format!("feature `{}` is collinear with the others", names[k])));
        }
        let x0 = cols[k][k];
        let alpha = if x0 >= T::zero() { -norm } else { norm };
        let mut v: Vec<T> = cols[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2 = v.iter().map(|&x| x * x).sum::<T>();
        if vnorm2 > T::zero() {
            let two = T::one() + T::one();
            for col in cols.iter_mut().skip(k + 1) {
                let s = v.iter().zip(&col[k..]).map(|(&a, &c)| a * c).sum::<T>();
                let f = two * s / vnorm2;
                for (c, &vi) in col[k..].iter_mut().zip(&v) {
                    *c -= f * vi;
                }
            }
            let s = v.iter().zip(&b[k..]).map(|(&a, &c)| a * c).sum::<T>();
            let f = two * s / vnorm2;
            for (c, &vi) in b[k..].iter_mut().zip(&v) {
                *c -= f * vi;
            }
        }
        diag[k] = alpha;
    }

    let mut x = vec![T::zero(); n];
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in k + 1..n {
            s -= cols[j][k] * x[j];
        }
        x[k] = s / diag[k];
    }
    Ok(x)
}

fn distinct_count(mut xs: Vec<f64>) -> usize {
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs.len()
}

/// Fit the decode model by unweighted OLS over features `{B*L, B, L, 1}`.
/// `epsilon` is carried through unchanged.
pub fn fit_itl<T: Scalar>(samples: &[ProfileSample], epsilon: T) -> Result<(ItlCoeffs<T>, FitQuality<T>)> {
    let decode: Vec<&ProfileSample> = samples.iter().filter(|s| s.kind == SampleKind::Decode).collect();
    for s in &decode {
        if !(s.observed_latency > 0.0) || s.batch_size == 0 {
            return Err(invalid("decode samples need batch_size >= 1 and positive latency"));
        }
    }
    if decode.len() < 4 {
        return Err(Error::RankDeficient(format!("need at least 4 decode samples, got {}", decode.len())));
    }
    if distinct_count(decode.iter().map(|s| s.batch_size as f64).collect()) < 2 {
        return Err(Error::RankDeficient("batch_size does not vary across samples".into()));
    }
    if distinct_count(decode.iter().map(|s| s.avg_seq_len).collect()) < 2 {
        return Err(Error::RankDeficient("avg_seq_len does not vary across samples".into()));
    }

    let rows: Vec<Vec<T>> = decode
        .iter()
        .map(|s| {
            let b = T::of(s.batch_size as f64);
            let l = T::of(s.avg_seq_len);
            vec![b * l, b, l, T::one()]
        })
        .collect();
    let y: Vec<T> = decode.iter().map(|s| T::of(s.observed_latency)).collect();
    let coef = least_squares(&rows, &y, &["batch*len", "batch", "len", "intercept"])?;
    let params = ItlCoeffs { alpha: coef[0], beta: coef[1], gamma: coef[2], delta: coef[3], epsilon };
    params.validate()?;

    let predicted: Vec<T> =
        rows.iter().map(|r| params.alpha * r[0] + params.beta * r[1] + params.gamma * r[2] + params.delta).collect();
    let quality = fit_quality(&predicted, &y)?;
    Ok((params, quality))
}

/// Fit the prefill model at a fixed knee: `phi` is the mean latency at or
/// below `theta`, the affine part is OLS over the rest.
pub fn fit_prefill<T: Scalar>(samples: &[ProfileSample], theta: T) -> Result<(PrefillCoeffs<T>, FitQuality<T>)> {
    let mut flat = Vec::new();
    let mut linear = Vec::new();
    for s in samples.iter().filter(|s| s.kind == SampleKind::Prefill) {
        let p = s.prompt_len.ok_or_else(|| invalid("prefill sample without prompt_len"))?;
        if p == 0 || !(s.observed_latency > 0.0) {
            return Err(invalid("prefill samples need prompt_len >= 1 and positive latency"));
        }
        if T::of_count(p as usize) <= theta {
            flat.push((p, s.observed_latency));
        } else {
            linear.push((p, s.observed_latency));
        }
    }
    if flat.is_empty() {
        return Err(Error::RankDeficient(format!("no prefill samples at or below theta={theta}; phi is undetermined")));
    }
    if distinct_count(linear.iter().map(|&(p, _)| p as f64).collect()) < 2 {
        return Err(Error::RankDeficient(format!(
            "need at least 2 distinct prompt lengths above theta={theta} for the linear regime"
        )));
    }

    let phi = flat.iter().map(|&(_, l)| T::of(l)).sum::<T>() / T::of_count(flat.len());
    let rows: Vec<Vec<T>> = linear.iter().map(|&(p, _)| vec![T::of(p as f64), T::one()]).collect();
    let y: Vec<T> = linear.iter().map(|&(_, l)| T::of(l)).collect();
    let coef = least_squares(&rows, &y, &["prompt_len", "intercept"])?;
    let params = PrefillCoeffs { phi, theta, alpha_p: coef[0], beta_p: coef[1] };

    let (predicted, observed): (Vec<T>, Vec<T>) =
        flat.iter().chain(&linear).map(|&(p, l)| (params.prefill_time_unchecked(p), T::of(l))).unzip();
    let quality = fit_quality(&predicted, &observed)?;
    Ok((params, quality))
}

/// Refit the prefill model at every candidate knee and keep the one with the
/// lowest RMSE. Candidates that cannot be fitted are skipped.
pub fn sweep_theta<T: Scalar>(
    samples: &[ProfileSample],
    candidates: &[T],
) -> Result<(PrefillCoeffs<T>, FitQuality<T>)> {
    let mut best: Option<(PrefillCoeffs<T>, FitQuality<T>)> = None;
    let mut last_err = None;
    for &theta in candidates {
        match fit_prefill(samples, theta) {
            Ok((p, q)) => {
                if best.as_ref().is_none_or(|(_, bq)| q.rmse < bq.rmse) {
                    best = Some((p, q));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| invalid("no theta candidates given")))
}

const PROFILE_COLUMNS: [&str; 5] = ["kind", "batch_size", "avg_seq_len", "prompt_len", "latency_ms"];

/// Read a profile CSV (`kind,batch_size,avg_seq_len,prompt_len,latency_ms`).
pub fn read_profile_csv(path: impl AsRef<Path>) -> Result<Vec<ProfileSample>> {
    let file = std::fs::File::open(path)?;
    read_profile(file)
}

pub fn read_profile<R: std::io::Read>(reader: R) -> Result<Vec<ProfileSample>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(PROFILE_COLUMNS) {
        *slot = headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        let bad = |msg: String| Error::Parse { line, msg };
        let kind = match field(0) {
            "decode" => SampleKind::Decode,
            "prefill" => SampleKind::Prefill,
            other => return Err(bad(format!("unknown kind `{other}`"))),
        };
        let batch_size: u32 = field(1).parse().map_err(|e| bad(format!("batch_size: {e}")))?;
        let avg_seq_len: f64 = field(2).parse().map_err(|e| bad(format!("avg_seq_len: {e}")))?;
        let prompt_len = match field(3) {
            "" => None,
            s => Some(s.parse::<u32>().map_err(|e| bad(format!("prompt_len: {e}")))?),
        };
        let latency_ms: f64 = field(4).parse().map_err(|e| bad(format!("latency_ms: {e}")))?;
        if kind == SampleKind::Prefill && prompt_len.is_none() {
            return Err(bad("prefill row without prompt_len".into()));
        }
        out.push(ProfileSample { kind, batch_size, avg_seq_len, prompt_len, observed_latency: latency_ms / 1000.0 });
    }
    Ok(out)
}

pub fn write_profile<W: std::io::Write>(writer: W, samples: &[ProfileSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PROFILE_COLUMNS)?;
    for s in samples {
        let kind = match s.kind {
            SampleKind::Decode => "decode",
            SampleKind::Prefill => "prefill",
        };
        w.write_record([
            kind.to_string(),
            s.batch_size.to_string(),
            s.avg_seq_len.to_string(),
            s.prompt_len.map(|p| p.to_string()).unwrap_or_default(),
            (s.observed_latency * 1000.0).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const UNITS_NOTE: &str = "alpha: ms/(request*token); beta: ms/request; gamma: ms/token; \
delta: ms; epsilon: dimensionless; phi: ms; theta: tokens; alpha_p: ms/token; beta_p: ms";

/// On-disk form of a cost model, in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParamsFile {
    #[serde(rename = "_units", default)]
    pub units: String,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub phi: f64,
    #[serde(default = "default_theta")]
    pub theta: f64,
    pub alpha_p: f64,
    pub beta_p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub itl_fit: Option<FitQuality<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefill_fit: Option<FitQuality<f64>>,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_theta() -> f64 {
    DEFAULT_THETA
}

impl CostParamsFile {
    pub fn from_model(model: &CostModel<f64>) -> Self {
        CostParamsFile {
            units: UNITS_NOTE.to_string(),
            alpha: model.itl.alpha * 1e3,
            beta: model.itl.beta * 1e3,
            gamma: model.itl.gamma * 1e3,
            delta: model.itl.delta * 1e3,
            epsilon: model.itl.epsilon,
            phi: model.prefill.phi * 1e3,
            theta: model.prefill.theta,
            alpha_p: model.prefill.alpha_p * 1e3,
            beta_p: model.prefill.beta_p * 1e3,
            itl_fit: None,
            prefill_fit: None,
        }
    }

    pub fn to_model(&self) -> Result<CostModel<f64>> {
        let model = CostModel {
            itl: ItlCoeffs {
                alpha: self.alpha / 1e3,
                beta: self.beta / 1e3,
                gamma: self.gamma / 1e3,
                delta: self.delta / 1e3,
                epsilon: self.epsilon,
            },
            prefill: PrefillCoeffs {
                phi: self.phi / 1e3,
                theta: self.theta,
                alpha_p: self.alpha_p / 1e3,
                beta_p: self.beta_p / 1e3,
            },
        };
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}
