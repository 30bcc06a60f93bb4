use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use fairserve_core::metrics::{standard_verdicts, FairnessReport, ReportConfig, ServiceLedger};
use fairserve_core::workloads::{ArrivalPattern, ClientSpec, Phase};
use fairserve_core::{builtin, generate, run, CostModel, EngineConfig, Request, RunOutput, ScenarioSpec, SchedulerSpec, SystemLimits};
use std::hint::black_box;

fn cost() -> CostModel {
    CostModel::weighted(1.0, 2.0)
}

fn simulate(spec: &ScenarioSpec, requests: &[Request], scheduler: &str) -> RunOutput {
    let sched: SchedulerSpec = scheduler.parse().unwrap();
    let mut s = sched.build(&cost(), spec.limits.max_output, &spec.weights(), spec.rng_seed);
    let config = EngineConfig {
        limits: spec.limits,
        horizon: Some(spec.duration),
        ..EngineConfig::default()
    };
    run(&config, &mut s, requests.to_vec()).unwrap()
}

fn overload(clients: u32) -> ScenarioSpec {
    // Enough load to keep every client backlogged, spread evenly.
    let rate = 600.0 / f64::from(clients);
    ScenarioSpec {
        name: format!("overload_{clients}c"),
        duration: 60.0,
        limits: SystemLimits::default(),
        rng_seed: 0,
        clients: (0..clients)
            .map(|c| ClientSpec::new(c, vec![Phase::new(60.0, ArrivalPattern::Poisson { rate }, 256, 256)]))
            .collect(),
    }
}

fn schedulers(c: &mut Criterion) {
    let spec = builtin("fig3_overload_2c").unwrap().with_duration(120.0);
    let requests = generate(&spec).unwrap();
    let mut group = c.benchmark_group("fig3_120s");
    group.sample_size(20);
    for name in ["fcfs", "rpm(30)", "lcf", "vtc", "vtc_predict(noisy(0.5))", "vtc_predict(moving_avg(5))"] {
        group.bench_function(name, |b| b.iter(|| black_box(simulate(&spec, &requests, name))));
    }
    group.finish();
}

fn client_scaling(c: &mut Criterion) {
    let mut group = c.benchmark_group("vtc_clients");
    group.sample_size(20);
    for n in [2, 8, 32, 128] {
        let spec = overload(n);
        let requests = generate(&spec).unwrap();
        group.throughput(Throughput::Elements(requests.len() as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &spec, |b, spec| {
            b.iter(|| black_box(simulate(spec, &requests, "vtc")))
        });
    }
    group.finish();
}

fn analysis(c: &mut Criterion) {
    let spec = builtin("fig3_overload_2c").unwrap();
    let requests = generate(&spec).unwrap();
    let out = simulate(&spec, &requests, "vtc");
    let mut group = c.benchmark_group("analysis");
    group.sample_size(20);
    group.bench_function("ledger", |b| b.iter(|| black_box(ServiceLedger::new(&out.log, &cost()))));
    group.bench_function("verdicts", |b| b.iter(|| black_box(standard_verdicts(&out.log, &cost(), &[]))));
    let ledger = ServiceLedger::new(&out.log, &cost());
    group.bench_function("report", |b| {
        b.iter(|| black_box(FairnessReport::build("vtc", &ledger, &out.requests, &ReportConfig::default())))
    });
    group.finish();
}

criterion_group!(benches, schedulers, client_scaling, analysis);
criterion_main!(benches);
