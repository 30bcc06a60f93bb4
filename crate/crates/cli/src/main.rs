//! `fairserve`: run, compare and verify schedulers on simulated LLM serving
//! workloads.

mod sim;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fairserve_core::engine::ReservationPolicy;
use fairserve_core::metrics::{FairnessReport, Status};
use fairserve_core::workloads::{random_scenario, write_trace, BUILTIN_NAMES};
use rayon::prelude::*;
use sim::{Finished, Workload, WorkloadOptions};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fairserve", version, about = "Fair scheduling for simulated LLM serving")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scheduler and write its event log, report and verdicts.
    Run(RunArgs),
    /// Simulate several schedulers on the same workload, in parallel.
    Compare(CompareArgs),
    /// Check the fairness monitors; exits non-zero if any of them fails.
    Verify(VerifyArgs),
    /// Expand a scenario into a trace file.
    GenTrace(GenTraceArgs),
    /// List the built-in scenarios.
    Scenarios,
}

#[derive(Clone, Copy, ValueEnum)]
enum Reservation {
    /// Reserve input plus the maximum output length.
    Conservative,
    /// Reserve input plus the true output length.
    Oracle,
}

impl From<Reservation> for ReservationPolicy {
    fn from(r: Reservation) -> Self {
        match r {
            Reservation::Conservative => ReservationPolicy::Conservative,
            Reservation::Oracle => ReservationPolicy::OracleExact,
        }
    }
}

#[derive(Args)]
struct WorkloadArgs {
    /// Built-in scenario name or path to a scenario TOML file.
    #[arg(long, conflicts_with = "trace")]
    scenario: Option<String>,
    /// Trace file to replay.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// KV-cache pool size in tokens.
    #[arg(long)]
    memory_pool: Option<u32>,
    /// Stretch or truncate the scenario to this many seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Seed for stochastic arrivals and the noisy predictor.
    #[arg(long)]
    seed: Option<u64>,
    /// Client weights, comma separated.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    /// Use this input and output length for every request.
    #[arg(long)]
    request_len: Option<u32>,
}

impl WorkloadArgs {
    fn options(&self) -> WorkloadOptions<'_> {
        WorkloadOptions {
            scenario: self.scenario.as_deref(),
            trace: self.trace.as_deref(),
            memory_pool: self.memory_pool,
            duration: self.duration,
            seed: self.seed,
            weights: self.weights.as_deref(),
            request_len: self.request_len,
        }
    }
}

#[derive(Args)]
struct EngineArgs {
    /// Cost model: weighted(w_p,w_q), profiled or custom(path).
    #[arg(long, default_value = "weighted(1,2)")]
    cost: String,
    /// Admit new requests every k decode steps.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    admit_every: u32,
    #[arg(long, value_enum, default_value_t = Reservation::Conservative)]
    reservation: Reservation,
    /// Stop at this simulated time instead of draining every request.
    #[arg(long)]
    horizon: Option<f64>,
    /// Limit for a bare `rpm` scheduler.
    #[arg(long)]
    rpm_limit: Option<u32>,
    /// Predictor for a bare `vtc_predict` scheduler: oracle, noisy(f) or
    /// moving_avg(n).
    #[arg(long)]
    predictor: Option<String>,
    /// Output directory; defaults to a path under the output root.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root for default output directories.
    #[arg(long, env = "FAIRSERVE_OUT", default_value = "fairserve-out")]
    out_root: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    #[command(flatten)]
    engine: EngineArgs,
    /// fcfs, rpm(n), rpm_defer(n), lcf, vtc, vtc_weighted[(w,..)],
    /// vtc_predict[(p)] or priority.
    #[arg(long, default_value = "vtc")]
    scheduler: String,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    #[command(flatten)]
    engine: EngineArgs,
    /// Schedulers to compare.
    #[arg(long = "scheduler", default_values_t = ["fcfs".to_string(), "lcf".to_string(), "vtc".to_string()])]
    schedulers: Vec<String>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    #[command(flatten)]
    engine: EngineArgs,
    /// Schedulers to check.
    #[arg(long = "scheduler", default_values_t = ["vtc".to_string(), "vtc_weighted".to_string()])]
    schedulers: Vec<String>,
    /// Also check this many seeded random scenarios.
    #[arg(long, default_value_t = 0)]
    random: u64,
    /// Print every verdict, not only failures.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct GenTraceArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    /// Trace file to write; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn engine_config(w: &Workload, e: &EngineArgs) -> fairserve_core::EngineConfig {
    sim::engine_config(w, e.admit_every, e.reservation.into(), e.horizon)
}

fn print_summary(reports: &[&FairnessReport]) -> Result<()> {
    let stdout = io::stdout();
    FairnessReport::write_summary(reports, stdout.lock())?;
    Ok(())
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    let w = sim::load_workload(&a.workload.options())?;
    let e = &a.engine;
    let scheduler = sim::resolve_scheduler(&a.scheduler, e.rpm_limit, e.predictor.as_deref())?;
    let cost = sim::resolve_cost(&e.cost)?;
    let f = sim::simulate(&w, &scheduler, &cost, &engine_config(&w, e))?;
    let dir = e
        .out
        .clone()
        .unwrap_or_else(|| sim::default_out(&e.out_root, &[&w.name, &scheduler.to_string()]));
    sim::write_run(&dir, &f)?;
    print_summary(&[&f.report])?;
    for v in &f.report.verdicts {
        println!("{v}");
    }
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn cmd_compare(a: &CompareArgs) -> Result<()> {
    let w = sim::load_workload(&a.workload.options())?;
    let e = &a.engine;
    let cost = sim::resolve_cost(&e.cost)?;
    let config = engine_config(&w, e);
    let schedulers = a
        .schedulers
        .iter()
        .map(|s| sim::resolve_scheduler(s, e.rpm_limit, e.predictor.as_deref()))
        .collect::<Result<Vec<_>>>()?;
    let root = e.out.clone().unwrap_or_else(|| sim::default_out(&e.out_root, &[&w.name]));
    let runs: Vec<Finished> = schedulers
        .par_iter()
        .map(|s| {
            let f = sim::simulate(&w, s, &cost, &config)?;
            sim::write_run(&root.join(sim::dir_name(&s.to_string())), &f)?;
            Ok(f)
        })
        .collect::<Result<_>>()?;
    let reports: Vec<&FairnessReport> = runs.iter().map(|f| &f.report).collect();
    std::fs::create_dir_all(&root)?;
    let mut file = BufWriter::new(std::fs::File::create(root.join("summary.csv"))?);
    FairnessReport::write_summary(&reports, &mut file)?;
    file.flush()?;
    print_summary(&reports)?;
    eprintln!("wrote {}", root.display());
    Ok(())
}

fn cmd_verify(a: &VerifyArgs) -> Result<()> {
    let e = &a.engine;
    let cost = sim::resolve_cost(&e.cost)?;
    let schedulers = a
        .schedulers
        .iter()
        .map(|s| sim::resolve_scheduler(s, e.rpm_limit, e.predictor.as_deref()))
        .collect::<Result<Vec<_>>>()?;
    let options = a.workload.options();
    let mut workloads = Vec::new();
    if options.scenario.is_some() || options.trace.is_some() {
        workloads.push(sim::load_workload(&options)?);
    } else if a.random == 0 {
        for name in BUILTIN_NAMES {
            let spec = sim::apply_scenario_options(sim::load_scenario(name)?, &options)?;
            workloads.push(sim::workload_from_spec(&spec)?);
        }
    }
    let base = options.seed.unwrap_or(0);
    for i in 0..a.random {
        workloads.push(sim::workload_from_spec(&random_scenario(base.wrapping_add(i)))?);
    }
    let jobs: Vec<(&Workload, &_)> = workloads
        .iter()
        .flat_map(|w| schedulers.iter().map(move |s| (w, s)))
        .collect();
    let results: Vec<(String, Vec<fairserve_core::metrics::Verdict>)> = jobs
        .par_iter()
        .map(|(w, s)| {
            let f = sim::simulate(w, s, &cost, &engine_config(w, e))?;
            Ok((format!("{}/{s}", w.name), f.report.verdicts))
        })
        .collect::<Result<_>>()?;

    let mut failures = Vec::new();
    let mut warnings = 0;
    for (run, verdicts) in &results {
        for v in verdicts {
            if a.verbose || v.status == Status::Fail {
                println!("{run}: {v}");
            }
            warnings += usize::from(v.status == Status::Warn);
        }
        failures.extend(sim::failing(verdicts).map(|v| format!("{} on {run}", v.monitor)));
    }
    println!(
        "{} runs, {} verdicts, {} failed, {warnings} warnings",
        results.len(),
        results.iter().map(|r| r.1.len()).sum::<usize>(),
        failures.len()
    );
    if !failures.is_empty() {
        bail!("monitor failed: {}", failures.join(", "));
    }
    Ok(())
}

fn cmd_gen_trace(a: &GenTraceArgs) -> Result<()> {
    let options = a.workload.options();
    if options.scenario.is_none() {
        bail!("gen-trace needs --scenario");
    }
    let w = sim::load_workload(&options)?;
    match &a.out {
        Some(path) => {
            fairserve_core::workloads::save_trace(&w.requests, path)?;
            eprintln!("wrote {} requests to {}", w.requests.len(), path.display());
        }
        None => {
            let stdout = io::stdout();
            let mut out = BufWriter::new(stdout.lock());
            write_trace(&w.requests, &mut out)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn cmd_scenarios() -> Result<()> {
    for name in BUILTIN_NAMES {
        let spec = sim::load_scenario(name)?;
        println!("{name}: {} clients, {} s", spec.clients.len(), spec.duration);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Verify(a) => cmd_verify(a),
        Command::GenTrace(a) => cmd_gen_trace(a),
        Command::Scenarios => cmd_scenarios(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        // `fairserve gen-trace ... | head` is not an error.
        Err(e) if e.downcast_ref::<io::Error>().is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

