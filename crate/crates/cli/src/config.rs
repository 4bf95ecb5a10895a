//! Run configuration files and command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use slosim_core::costmodel::{
    fit_itl, fit_prefill, read_profile_csv, sweep_theta, CostParamsFile, DEFAULT_EPSILON, DEFAULT_THETA,
};
use slosim_core::predictor::PredictorConfig;
use slosim_core::report::WorkloadSource;
use slosim_core::workload::{load_trace, LengthDist, Trace, WorkloadSpec};
use slosim_core::{CostParams, PolicyName, PolicySpec, SimConfig};

pub const SEED_ENV: &str = "SLOSIM_SEED";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    #[serde(default)]
    pub seed: u64,
    /// Seconds; omitted means run until every request resolves.
    pub horizon: Option<f64>,
    #[serde(default)]
    pub log_decisions: bool,
    pub out_dir: Option<PathBuf>,
    pub workload: WorkloadSection,
    pub cost: CostSection,
    #[serde(default = "default_policy")]
    pub policy: PolicySpec,
    #[serde(default)]
    pub predictor: PredictorConfig,
    pub sweep: Option<SweepSection>,
}

/// Exactly one of `trace` or `spec`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    pub trace: Option<PathBuf>,
    pub spec: Option<WorkloadSpec>,
}

/// Exactly one of `file`, `params` or `profile`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    /// A params JSON written by `slosim fit`.
    pub file: Option<PathBuf>,
    /// Inline parameters, in milliseconds.
    pub params: Option<CostParamsFile>,
    /// Profile CSV to fit at load time.
    pub profile: Option<PathBuf>,
    /// Knee for `profile`; a list sweeps.
    pub theta: Option<Vec<f64>>,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub qps: Vec<f64>,
    /// The first policy is the numerator of every ratio.
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicySpec>,
    #[serde(default)]
    pub ablation: bool,
    /// Load for the ablation trace; defaults to the largest sweep QPS.
    pub ablation_qps: Option<f64>,
}

fn default_policy() -> PolicySpec {
    PolicySpec::named(PolicyName::Scorpio)
}

fn default_policies() -> Vec<PolicySpec> {
    vec![PolicySpec::named(PolicyName::Scorpio), PolicySpec::named(PolicyName::Greedy)]
}

/// A parsed config file with `--set` overrides applied.
pub struct Loaded<T> {
    pub value: T,
    /// Directory relative paths in the file are resolved against.
    pub base: PathBuf,
}

/// Read TOML or JSON (by extension), apply `key.path=value` overrides and
/// deserialize. Unknown keys are errors.
pub fn load<T: DeserializeOwned>(path: &Path, overrides: &[String]) -> Result<Loaded<T>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut root = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let json: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        match toml::Value::try_from(json).map_err(|e| anyhow!("{}: {e}", path.display()))? {
            toml::Value::Table(t) => t,
            _ => bail!("{}: top level must be an object", path.display()),
        }
    } else {
        text.parse::<toml::Table>().with_context(|| format!("parsing {}", path.display()))?
    };
    for o in overrides {
        apply_override(&mut root, o)?;
    }
    let value = toml::Value::Table(root).try_into().with_context(|| format!("invalid config {}", path.display()))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { value, base })
}

/// `a.b.c=value`. The value is read as a TOML literal when it parses as one
/// and as a bare string otherwise.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) =
        assignment.split_once('=').ok_or_else(|| anyhow!("--set expects key=value, got `{assignment}`"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("--set: bad key `{key}`");
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let (last, parents) = parts.split_last().expect("non-empty");
    let mut table = root;
    for p in parents {
        let slot = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        table = slot.as_table_mut().ok_or_else(|| anyhow!("--set: `{p}` in `{key}` is not a table"))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

/// `SLOSIM_SEED`, when set, replaces the configured seed.
pub fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().map(Some).map_err(|e| anyhow!("{SEED_ENV}=`{s}` is not an unsigned integer: {e}")),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => bail!("{SEED_ENV}: {e}"),
    }
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn resolve_dist(base: &Path, d: &mut LengthDist) {
    if let LengthDist::Empirical { path } = d {
        *path = resolve(base, path);
    }
}

pub fn resolve_spec_paths(base: &Path, spec: &mut WorkloadSpec) {
    resolve_dist(base, &mut spec.prompt_len);
    resolve_dist(base, &mut spec.output_len);
}

/// Where a run's requests come from, after validation.
pub enum Workload {
    Trace(PathBuf),
    Spec(WorkloadSpec),
}

/// A validated run config. Errors here are configuration errors.
pub struct RunSetup {
    pub file: RunConfigFile,
    pub base: PathBuf,
    pub workload: Workload,
}

impl RunSetup {
    pub fn new(loaded: Loaded<RunConfigFile>) -> Result<Self> {
        let Loaded { value: mut file, base } = loaded;
        if let Some(seed) = seed_override()? {
            file.seed = seed;
        }
        if let Some(h) = file.horizon {
            if !(h > 0.0) {
                bail!("horizon must be positive, got {h}");
            }
        }
        let workload = match (&file.workload.trace, &file.workload.spec) {
            (Some(t), None) => Workload::Trace(resolve(&base, t)),
            (None, Some(s)) => {
                if s.seed != 0 {
                    bail!("workload.spec.seed is derived from the top-level `seed`; remove it");
                }
                let mut s = s.clone();
                resolve_spec_paths(&base, &mut s);
                s.validate()?;
                Workload::Spec(s)
            }
            _ => bail!("[workload] needs exactly one of `trace` or `spec`"),
        };
        let c = &file.cost;
        let given = [c.file.is_some(), c.params.is_some(), c.profile.is_some()];
        if given.iter().filter(|&&g| g).count() != 1 {
            bail!("[cost] needs exactly one of `file`, `params` or `profile`");
        }
        if c.profile.is_none() && (c.theta.is_some() || c.epsilon.is_some()) {
            bail!("cost.theta and cost.epsilon only apply with cost.profile");
        }
        if let Some(p) = &c.params {
            p.to_model()?;
        }
        file.policy.validate()?;
        if let Some(s) = &file.sweep {
            if s.qps.is_empty() || s.policies.is_empty() {
                bail!("[sweep] needs at least one qps value and one policy");
            }
            if let Some(q) = s.qps.iter().chain(&s.ablation_qps).find(|q| !(**q > 0.0) || !q.is_finite()) {
                bail!("sweep qps must be positive, got {q}");
            }
            for p in &s.policies {
                p.validate()?;
            }
        }
        Ok(RunSetup { file, base, workload })
    }

    /// Load or fit the cost model.
    pub fn cost(&self) -> Result<CostParams> {
        let c = &self.file.cost;
        if let Some(p) = &c.params {
            return Ok(p.to_model()?);
        }
        if let Some(f) = &c.file {
            let path = resolve(&self.base, f);
            let params =
                CostParamsFile::load(&path).with_context(|| format!("loading cost params {}", path.display()))?;
            return Ok(params.to_model()?);
        }
        let path = resolve(&self.base, c.profile.as_ref().expect("validated"));
        let samples = read_profile_csv(&path).with_context(|| format!("reading {}", path.display()))?;
        let (itl, _) = fit_itl::<f64>(&samples, c.epsilon.unwrap_or(DEFAULT_EPSILON))?;
        let thetas = c.theta.clone().unwrap_or_else(|| vec![DEFAULT_THETA]);
        let (prefill, _) = match thetas.as_slice() {
            [t] => fit_prefill::<f64>(&samples, *t)?,
            many => sweep_theta::<f64>(&samples, many)?,
        };
        let model = CostParams { itl, prefill };
        model.validate()?;
        Ok(model)
    }

    pub fn trace(&self) -> Result<Trace> {
        match &self.workload {
            Workload::Trace(p) => load_trace(p).with_context(|| format!("loading trace {}", p.display())),
            // Same derivation as a sweep cell at the spec's own QPS.
            Workload::Spec(s) => Ok(WorkloadSource::Spec(s.clone()).trace_at(s.qps, self.file.seed)?),
        }
    }

    pub fn sim_config(&self, cost: CostParams) -> SimConfig {
        SimConfig {
            horizon: self.file.horizon,
            cost,
            policy: self.file.policy.clone(),
            predictor: self.file.predictor.clone(),
            seed: self.file.seed,
            log_decisions: self.file.log_decisions,
        }
    }

    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        match (flag, &self.file.out_dir) {
            (Some(d), _) => d.to_path_buf(),
            (None, Some(d)) => resolve(&self.base, d),
            (None, None) => PathBuf::from("slosim-out"),
        }
    }
}

/// Config for `eval-predictor`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub predictor: PredictorConfig,
}
