//! Turning command-line arguments into simulations and writing their results.

use anyhow::{bail, Context, Result};
use fairserve_core::engine::ReservationPolicy;
use fairserve_core::metrics::{standard_verdicts, FairnessReport, ReportConfig, ServiceLedger, Verdict};
use fairserve_core::schedulers::{parse_cost_model, PredictorKind, SchedulerSpec};
use fairserve_core::workloads::{load_trace, ScenarioSpec};
use fairserve_core::{builtin, generate, run, CostModel, EngineConfig, Request, RunOutput, SystemLimits};
use serde::Serialize;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

/// A fully resolved workload: where it came from, its limits and requests.
pub struct Workload {
    pub name: String,
    pub limits: SystemLimits,
    pub weights: Vec<f64>,
    pub seed: u64,
    pub requests: Vec<Request>,
}

pub struct WorkloadOptions<'a> {
    pub scenario: Option<&'a str>,
    pub trace: Option<&'a Path>,
    pub memory_pool: Option<u32>,
    pub duration: Option<f64>,
    pub seed: Option<u64>,
    pub weights: Option<&'a [f64]>,
    pub request_len: Option<u32>,
}

/// Looks `name` up in the catalog, falling back to a scenario file.
pub fn load_scenario(name: &str) -> Result<ScenarioSpec> {
    let path = Path::new(name);
    if path.exists() {
        return ScenarioSpec::load(path).with_context(|| format!("reading scenario file {name}"));
    }
    Ok(builtin(name)?)
}

pub fn apply_scenario_options(mut spec: ScenarioSpec, o: &WorkloadOptions) -> Result<ScenarioSpec> {
    if let Some(d) = o.duration {
        spec = spec.with_duration(d);
    }
    if let Some(n) = o.request_len {
        spec = spec.with_request_len(n, n);
    }
    if let Some(m) = o.memory_pool {
        spec.limits.pool_tokens = m;
    }
    if let Some(s) = o.seed {
        spec.rng_seed = s;
    }
    if let Some(w) = o.weights {
        if w.len() != spec.clients.len() {
            bail!("--weights lists {} weights for {} clients", w.len(), spec.clients.len());
        }
        for (c, &w) in spec.clients.iter_mut().zip(w) {
            c.weight = w;
        }
    }
    spec.validate()?;
    Ok(spec)
}

pub fn workload_from_spec(spec: &ScenarioSpec) -> Result<Workload> {
    Ok(Workload {
        name: spec.name.clone(),
        limits: spec.limits,
        weights: spec.weights(),
        seed: spec.rng_seed,
        requests: generate(spec)?,
    })
}

pub fn load_workload(o: &WorkloadOptions) -> Result<Workload> {
    match (o.scenario, o.trace) {
        (Some(_), Some(_)) => bail!("--scenario and --trace are mutually exclusive"),
        (Some(name), None) => workload_from_spec(&apply_scenario_options(load_scenario(name)?, o)?),
        (None, Some(path)) => {
            if o.request_len.is_some() || o.duration.is_some() {
                bail!("--request-len and --duration only apply to scenarios");
            }
            let mut limits = SystemLimits::default();
            if let Some(m) = o.memory_pool {
                limits.pool_tokens = m;
            }
            limits.validate()?;
            let requests = load_trace(path, Some(&limits))?;
            let clients = requests.iter().map(|r| r.client.index() + 1).max().unwrap_or(0);
            let weights = match o.weights {
                Some(w) if w.len() < clients => bail!("--weights lists {} weights for {clients} clients", w.len()),
                Some(w) => w.to_vec(),
                None => vec![1.0; clients],
            };
            Ok(Workload {
                name: path.file_stem().map_or("trace".into(), |s| s.to_string_lossy().into_owned()),
                limits,
                weights,
                seed: o.seed.unwrap_or(0),
                requests,
            })
        }
        (None, None) => bail!("one of --scenario or --trace is required"),
    }
}

/// Parses `--scheduler`, filling in `rpm`'s limit and `vtc_predict`'s
/// predictor from their own flags.
pub fn resolve_scheduler(text: &str, rpm_limit: Option<u32>, predictor: Option<&str>) -> Result<SchedulerSpec> {
    let text = text.trim();
    let full = match text {
        "rpm" | "rpm_defer" => match rpm_limit {
            Some(n) => format!("{text}({n})"),
            None => bail!("`{text}` needs a limit: use {text}(n) or --rpm-limit"),
        },
        "vtc_predict" => format!("vtc_predict({})", predictor.unwrap_or("oracle")),
        other => {
            if rpm_limit.is_some() && !other.starts_with("rpm") {
                bail!("--rpm-limit only applies to rpm schedulers");
            }
            if predictor.is_some() && !other.starts_with("vtc_predict") {
                bail!("--predictor only applies to vtc_predict");
            }
            other.to_string()
        }
    };
    if let Some(p) = predictor {
        p.parse::<PredictorKind>()?;
    }
    Ok(full.parse()?)
}

pub fn resolve_cost(text: &str) -> Result<CostModel> {
    Ok(parse_cost_model(text)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSettings {
    pub scenario: String,
    pub scheduler: String,
    pub cost: CostModel,
    pub engine: EngineConfig,
    pub report: ReportConfig,
    pub weights: Vec<f64>,
}

pub struct Finished {
    pub settings: RunSettings,
    pub output: RunOutput,
    pub report: FairnessReport,
}

pub fn engine_config(
    w: &Workload,
    admit_every: u32,
    reservation: ReservationPolicy,
    horizon: Option<f64>,
) -> EngineConfig {
    EngineConfig {
        limits: w.limits,
        admit_every_k_steps: admit_every,
        reservation_policy: reservation,
        rng_seed: w.seed,
        horizon,
        ..EngineConfig::default()
    }
}

/// Runs one scheduler on the workload and builds its report and verdicts.
pub fn simulate(w: &Workload, scheduler: &SchedulerSpec, cost: &CostModel, engine: &EngineConfig) -> Result<Finished> {
    cost.validate(&w.limits)?;
    let mut s = scheduler.build(cost, w.limits.max_output, &w.weights, w.seed);
    let output = run(engine, &mut s, w.requests.clone())
        .with_context(|| format!("simulating {} with {scheduler}", w.name))?;
    let weights = scheduler.weights(&w.weights).unwrap_or(&[]).to_vec();
    let ledger = ServiceLedger::with_weights(&output.log, cost, &weights);
    let config = ReportConfig::default();
    let mut report = FairnessReport::build(&scheduler.to_string(), &ledger, &output.requests, &config);
    report.verdicts = standard_verdicts(&output.log, cost, &weights);
    Ok(Finished {
        settings: RunSettings {
            scenario: w.name.clone(),
            scheduler: scheduler.to_string(),
            cost: cost.clone(),
            engine: engine.clone(),
            report: config,
            weights,
        },
        output,
        report,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// Writes `events.jsonl`, `report.csv`, `clients.csv`, `series/`,
/// `verdicts.json` and `config.json` into `dir`.
pub fn write_run(dir: &Path, f: &Finished) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut w = create(&dir.join("events.jsonl"))?;
    f.output.log.write_jsonl(&mut w)?;
    w.flush()?;

    let mut w = create(&dir.join("report.csv"))?;
    FairnessReport::write_summary(&[&f.report], &mut w)?;
    w.flush()?;

    let mut w = create(&dir.join("clients.csv"))?;
    writeln!(w, "client,total_service,requests,finished,rejected,mean_response_time")?;
    for c in &f.report.clients {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            c.client.0, c.total_service, c.requests, c.finished, c.rejected, c.mean_response_time
        )?;
    }
    w.flush()?;

    f.report.write_series(&dir.join("series"))?;
    let mut w = create(&dir.join("verdicts.json"))?;
    f.report.write_verdicts(&mut w)?;
    w.flush()?;
    let mut w = create(&dir.join("config.json"))?;
    serde_json::to_writer_pretty(&mut w, &f.settings)?;
    w.flush()?;
    Ok(())
}

/// Directory-safe form of a scheduler spec, e.g. `vtc_predict-noisy-0.5`.
pub fn dir_name(s: &str) -> String {
    let mut out = String::new();
    for ch in s.chars() {
        match ch {
            '(' | ',' => out.push('-'),
            ')' => {}
            c if c.is_ascii_alphanumeric() || c == '_' || c == '.' => out.push(c),
            _ => out.push('_'),
        }
    }
    out
}

pub fn default_out(root: &Path, parts: &[&str]) -> PathBuf {
    parts.iter().fold(root.to_path_buf(), |p, s| p.join(dir_name(s)))
}

pub fn failing(verdicts: &[Verdict]) -> impl Iterator<Item = &Verdict> {
    verdicts.iter().filter(|v| !v.passed())
}
