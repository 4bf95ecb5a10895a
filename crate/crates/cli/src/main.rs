// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use slosim_core::costmodel::{
    fit_itl, fit_prefill, read_profile_csv, sweep_theta, CostParamsFile, DEFAULT_EPSILON, DEFAULT_THETA,
};
use slosim_core::predictor::{corpus_requests, load_corpus};
use slosim_core::report::{
    ablation, format_run, format_sweep, report_run, sweep, write_ablation_csv, write_cumulative_csv, write_goodput_csv,
    write_outcomes_csv, WorkloadSource,
};
use slosim_core::slo::SloCategoryTable;
use slosim_core::workload::{convert_csv, generate, save_trace, ColumnMap, SloAssignment, WorkloadSpec};
use slosim_core::{measure_overhead, simulate, CostModel, FitQuality, PolicyName};

use config::{EvalConfig, RunSetup, Workload};

#[derive(Parser)]
#[command(name = "slosim", version, about = "SLO-aware LLM serving simulator")]
struct Cli {
    /// Worker threads for parallel work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit cost-model coefficients to a profile CSV.
    Fit(FitArgs),
    /// Generate a synthetic trace from a workload spec.
    Gen(GenArgs),
    /// Run one simulation.
    Simulate(RunArgs),
    /// Sweep QPS across policies, optionally with the guard ablation.
    Compare(RunArgs),
    /// Score a length predictor on a corpus.
    EvalPredictor(EvalArgs),
    /// Convert a CSV request log into a trace.
    Convert(ConvertArgs),
}

#[derive(Args)]
struct FitArgs {
    /// CSV with columns kind,batch_size,avg_seq_len,prompt_len,latency_ms.
    #[arg(long)]
    profile: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, conflicts_with = "theta_sweep")]
    theta: Option<f64>,
    /// Comma-separated knee candidates; the lowest-RMSE one is kept.
    #[arg(long, value_delimiter = ',')]
    theta_sweep: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
}

#[derive(Args)]
struct GenArgs {
    /// Workload spec (TOML or JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Run config (TOML or JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Shorthand for --set policy.name=NAME.
    #[arg(long)]
    policy: Option<PolicyName>,
    #[arg(long)]
    log_decisions: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// JSONL with prompt_len and output_len per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Optional `seed` and `[predictor]` section.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    input: PathBuf,
    /// timestamp=<col>,prompt=<col>,output=<col>
    #[arg(long)]
    map: String,
    #[arg(long, short)]
    out: PathBuf,
    /// llama8b or gemma27b.
    #[arg(long, default_value = "llama8b")]
    slo_table: String,
    /// One weight per category; uniform by default.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Exit status classes: 1 for usage and configuration, 2 for runtime.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

trait Classify<T> {
    fn config(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }
    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.jobs {
        Some(0) => Err(Failure::Config(anyhow!("--jobs must be at least 1"))),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli.cmd)),
            Err(e) => Err(Failure::Runtime(e.into())),
        },
        None => dispatch(cli.cmd),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Fit(a) => cmd_fit(a),
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Compare(a) => cmd_compare(a),
        Cmd::EvalPredictor(a) => cmd_eval_predictor(a),
        Cmd::Convert(a) => cmd_convert(a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn with_file(path: &Path, f: impl FnOnce(BufWriter<File>) -> slosim_core::Result<()>) -> Result<()> {
    f(create(path)?).with_context(|| format!("writing {}", path.display()))
}

fn cmd_fit(a: FitArgs) -> Result<(), Failure> {
    if let Some(t) = a.theta_sweep.as_ref().filter(|t| t.is_empty()) {
        return Err(Failure::Config(anyhow!("--theta-sweep needs candidates, got {t:?}")));
    }
    let samples = read_profile_csv(&a.profile).with_context(|| format!("reading {}", a.profile.display())).runtime()?;
    let (itl, itl_q) = fit_itl::<f64>(&samples, a.epsilon).context("decode fit").runtime()?;
    let (prefill, pre_q) = match &a.theta_sweep {
        Some(c) => sweep_theta::<f64>(&samples, c),
        None => fit_prefill::<f64>(&samples, a.theta.unwrap_or(DEFAULT_THETA)),
    }
    .context("prefill fit")
    .runtime()?;
    let model = CostModel { itl, prefill };
    model.validate().runtime()?;
    let mut file = CostParamsFile::from_model(&model);
    // Params are stored in milliseconds; keep the fit errors in step.
    let ms = |q: FitQuality<f64>| FitQuality { rmse: q.rmse * 1e3, ..q };
    file.itl_fit = Some(ms(itl_q));
    file.prefill_fit = Some(ms(pre_q));
    write_json(&a.out, &file).runtime()?;
    println!("decode   r2 {:.6}  rmse {:.4} ms  mape {:.3}%", itl_q.r2, itl_q.rmse * 1e3, itl_q.mape);
    println!(
        "prefill  r2 {:.6}  rmse {:.4} ms  mape {:.3}%  theta {}",
        pre_q.r2,
        pre_q.rmse * 1e3,
        pre_q.mape,
        prefill.theta
    );
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<(), Failure> {
    let loaded = config::load::<WorkloadSpec>(&a.config, &a.set).config()?;
    let mut spec = loaded.value;
    if let Some(seed) = config::seed_override().config()? {
        spec.seed = seed;
    }
    config::resolve_spec_paths(&loaded.base, &mut spec);
    spec.validate().config()?;
    let trace = generate(&spec).runtime()?;
    save_trace(&trace, &a.out).with_context(|| format!("writing {}", a.out.display())).runtime()?;
    println!("{} requests over {:.3} s", trace.len(), trace.span());
    let mut mix: BTreeMap<u8, usize> = BTreeMap::new();
    for r in &trace.requests {
        *mix.entry(r.category).or_default() += 1;
    }
    for (cat, n) in mix {
        println!("  category {cat}: {n} ({:.1}%)", 100.0 * n as f64 / trace.len() as f64);
    }
    Ok(())
}

fn setup(a: &RunArgs) -> Result<RunSetup, Failure> {
    let mut overrides = a.set.clone();
    if let Some(p) = a.policy {
        overrides.push(format!("policy.name=\"{}\"", p.as_str()));
    }
    if a.log_decisions {
        overrides.push("log_decisions=true".into());
    }
    let loaded = config::load(&a.config, &overrides).config()?;
    RunSetup::new(loaded).config()
}

fn cmd_simulate(a: RunArgs) -> Result<(), Failure> {
    let s = setup(&a)?;
    let cost = s.cost().runtime()?;
    let trace = s.trace().runtime()?;
    let cfg = s.sim_config(cost);
    let result = simulate(&trace, &cfg).runtime()?;
    let report = report_run(&result, &trace, cfg.horizon);
    let dir = s.out_dir(a.out_dir.as_deref());

    let io = || -> Result<()> {
        with_file(&dir.join("outcomes.csv"), |w| write_outcomes_csv(w, &result.outcomes))?;
        write_json(&dir.join("report.json"), &report)?;
        if cfg.log_decisions {
            let mut w = create(&dir.join("decisions.jsonl"))?;
            for d in &result.log.decisions {
                serde_json::to_writer(&mut w, d)?;
                writeln!(w)?;
            }
            w.flush()?;
        }
        Ok(())
    };
    io().runtime()?;

    print!("{}", format_run(&cfg.policy.label(), &report));
    let o = measure_overhead(&result);
    println!(
        "overhead    total {:.3} s simulated, schedule {:.4} s, policy {:.4} s ({:.4}%)",
        o.total_s, o.schedule_s, o.policy_s, o.overhead_pct
    );
    println!("outputs     {}", dir.display());
    Ok(())
}

fn cmd_compare(a: RunArgs) -> Result<(), Failure> {
    let s = setup(&a)?;
    let sw = s.file.sweep.clone().ok_or_else(|| anyhow!("compare needs a [sweep] section")).config()?;
    let cost = s.cost().runtime()?;
    let source = match &s.workload {
        Workload::Spec(spec) => WorkloadSource::Spec(spec.clone()),
        Workload::Trace(_) => WorkloadSource::Trace(s.trace().runtime()?),
    };
    let base = s.sim_config(cost);
    let report = sweep(&source, &sw.qps, &sw.policies, &base).runtime()?;
    let dir = s.out_dir(a.out_dir.as_deref());

    let cells = if sw.ablation {
        let q = sw.ablation_qps.unwrap_or_else(|| sw.qps.iter().copied().fold(f64::MIN, f64::max));
        let trace = source.trace_at(q, base.seed).runtime()?;
        Some((q, ablation(&trace, &base).runtime()?))
    } else {
        None
    };

    let io = || -> Result<()> {
        write_json(&dir.join("sweep.json"), &report)?;
        with_file(&dir.join("fig4_goodput.csv"), |w| write_goodput_csv(w, &report))?;
        with_file(&dir.join("fig5_cumulative.csv"), |w| write_cumulative_csv(w, &report))?;
        if let Some((_, cells)) = &cells {
            write_json(&dir.join("ablation.json"), cells)?;
            with_file(&dir.join("fig6_ablation.csv"), |w| write_ablation_csv(w, cells))?;
        }
        Ok(())
    };
    io().runtime()?;

    print!("{}", format_sweep(&report));
    if let Some((q, cells)) = &cells {
        println!("ablation at qps {q}");
        for c in cells {
            println!(
                "  {:<10} adherence {:.4}  ttft violations {}  tpot violations {}",
                c.config, c.report.adherence, c.report.ttft_violations, c.report.tpot_violations
            );
        }
    }
    println!("outputs {}", dir.display());
    Ok(())
}

fn cmd_eval_predictor(a: EvalArgs) -> Result<(), Failure> {
    let mut cfg = match &a.config {
        Some(p) => config::load::<EvalConfig>(p, &a.set).config()?.value,
        None if !a.set.is_empty() => {
            let mut t = toml::Table::new();
            for o in &a.set {
                config::apply_override(&mut t, o).config()?;
            }
            toml::Value::Table(t).try_into().context("invalid --set").config()?
        }
        None => EvalConfig::default(),
    };
    if let Some(seed) = config::seed_override().config()? {
        cfg.seed = seed;
    }
    let rows = load_corpus(&a.corpus).with_context(|| format!("reading {}", a.corpus.display())).runtime()?;
    let reqs = corpus_requests(&rows);
    let sample: Vec<u32> = rows.iter().map(|r| r.output_len).collect();
    let predictor = cfg.predictor.build(&sample, cfg.seed).config()?;
    let eval = predictor.evaluate(&reqs).runtime()?;
    if let Some(out) = &a.out {
        write_json(out, &eval).runtime()?;
    }
    println!("rows      {}", reqs.len());
    println!("exact     {:.4}", eval.exact_acc);
    for (n, acc) in &eval.off_by_n_acc {
        println!("off-by-{n}  {acc:.4}");
    }
    println!("tau       {:.4}", eval.kendall_tau);
    println!("rmse      {:.2} tokens", eval.rmse_tokens);
    Ok(())
}

fn cmd_convert(a: ConvertArgs) -> Result<(), Failure> {
    let map = ColumnMap::parse(&a.map).config()?;
    let table = SloCategoryTable::by_name(&a.slo_table)
        .ok_or_else(|| anyhow!("unknown SLO table `{}` (llama8b, gemma27b)", a.slo_table))
        .config()?;
    let weights = a.weights.clone().unwrap_or_else(|| vec![1.0; table.categories.len()]);
    if weights.len() != table.categories.len() {
        return Err(Failure::Config(anyhow!(
            "--weights needs {} values, got {}",
            table.categories.len(),
            weights.len()
        )));
    }
    let seed = config::seed_override().config()?.unwrap_or(a.seed);
    let input = File::open(&a.input).with_context(|| format!("opening {}", a.input.display())).runtime()?;
    let trace = convert_csv(input, &map, &SloAssignment { table, weights, seed }).runtime()?;
    if trace.is_empty() {
        return Err(Failure::Runtime(anyhow!("{} has no rows", a.input.display())));
    }
    save_trace(&trace, &a.out).with_context(|| format!("writing {}", a.out.display())).runtime()?;
    println!("{} requests over {:.3} s", trace.len(), trace.span());
    Ok(())
}
