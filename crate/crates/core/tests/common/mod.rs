#![allow(dead_code)]

use fairserve_core::engine::{EventKind, EventLog};
#[allow(unused_imports)]
pub use fairserve_core::workloads::random_scenario;
use fairserve_core::{builtin, generate, run, ClientId, CostModel, EngineConfig, RunOutput, ScenarioSpec, SchedulerSpec};
use std::collections::HashMap;

pub fn scenario(name: &str) -> ScenarioSpec {
    builtin(name).unwrap_or_else(|e| panic!("{e}"))
}

pub fn config_for(spec: &ScenarioSpec) -> EngineConfig {
    EngineConfig {
        limits: spec.limits,
        rng_seed: spec.rng_seed,
        ..EngineConfig::default()
    }
}

/// Runs `scheduler` on `spec` with the default engine, stopping at the end
/// of the arrival window when `cut` is set.
pub fn simulate(spec: &ScenarioSpec, scheduler: &str, cost: &CostModel, cut: bool) -> RunOutput {
    let mut config = config_for(spec);
    if cut {
        config.horizon = Some(spec.duration);
    }
    simulate_with(spec, scheduler, cost, &config)
}

pub fn simulate_with(spec: &ScenarioSpec, scheduler: &str, cost: &CostModel, config: &EngineConfig) -> RunOutput {
    let requests = generate(spec).unwrap_or_else(|e| panic!("{}: {e}", spec.name));
    let sched: SchedulerSpec = scheduler.parse().unwrap_or_else(|e| panic!("{e}"));
    let mut s = sched.build(cost, spec.limits.max_output, &spec.weights(), spec.rng_seed);
    run(config, &mut s, requests).unwrap_or_else(|e| panic!("{} / {scheduler}: {e}", spec.name))
}

/// Total service per client, recomputed token by token straight from the
/// event stream: `h(n_p, 0) - h(0, 0)` when a request is dispatched, then
/// `h(n_p, k) - h(n_p, k - 1)` for its k-th decoded token.
pub fn replay_service(log: &EventLog, cost: &CostModel) -> Vec<f64> {
    let mut info: HashMap<u64, (usize, u32)> = HashMap::new();
    let mut generated: HashMap<u64, u32> = HashMap::new();
    let mut total: Vec<f64> = Vec::new();
    let credit = |total: &mut Vec<f64>, client: usize, amount: f64| {
        if total.len() <= client {
            total.resize(client + 1, 0.0);
        }
        total[client] += amount;
    };
    for e in &log.events {
        match &e.kind {
            EventKind::Arrival {
                request_id,
                client,
                input_len,
                ..
            } => {
                info.insert(*request_id, (client.0 as usize, *input_len));
                if total.len() <= client.0 as usize {
                    total.resize(client.0 as usize + 1, 0.0);
                }
            }
            EventKind::Dispatch { request_id, .. } => {
                let (c, n_p) = info[request_id];
                credit(&mut total, c, cost.h(n_p, 0) - cost.h(0, 0));
            }
            EventKind::TokensDecoded { request_ids } => {
                for id in request_ids {
                    let (c, n_p) = info[id];
                    let k = generated.entry(*id).or_insert(0);
                    *k += 1;
                    credit(&mut total, c, cost.h(n_p, *k) - cost.h(n_p, *k - 1));
                }
            }
            _ => {}
        }
    }
    total
}

pub fn client(i: u32) -> ClientId {
    ClientId(i)
}
