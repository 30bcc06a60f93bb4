use fairserve_core::engine::{BatchBuilder, Engine, EventKind, RejectReason, StepOutcome};
use fairserve_core::metrics::ServiceLedger;
use fairserve_core::schedulers::{ArrivalDecision, Fcfs, Scheduler};
use fairserve_core::{
    run, ClientId, CostModel, EngineConfig, EngineError, Request, SchedulerSpec, SystemLimits,
    TimingModel,
};

const EVERY_SCHEDULER: [&str; 8] = [
    "fcfs",
    "rpm(5)",
    "rpm_defer(5)",
    "lcf",
    "vtc",
    "vtc_weighted",
    "vtc_predict(oracle)",
    "priority",
];

fn build(name: &str) -> Box<dyn Scheduler> {
    let spec: SchedulerSpec = name.parse().unwrap();
    spec.build(&CostModel::default(), 1024, &[1.0], 0)
}

fn req(id: u64, client: u32, at: f64, input: u32, output: u32) -> Request {
    Request::new(id, ClientId(client), at, input, output)
}

fn flat_timing(decode: f64) -> TimingModel {
    TimingModel {
        prefill_seconds_per_token: 0.0,
        decode_step_base_seconds: decode,
        decode_step_seconds_per_batch_token: 0.0,
    }
}

#[test]
fn single_request_trace_for_every_scheduler() {
    for name in EVERY_SCHEDULER {
        let mut s = build(name);
        let out = run(&EngineConfig::default(), &mut s, vec![req(7, 0, 0.0, 4, 3)]).unwrap();
        let count = |f: &dyn Fn(&EventKind) -> bool| out.log.events.iter().filter(|e| f(&e.kind)).count();
        assert_eq!(count(&|k| matches!(k, EventKind::Dispatch { request_id: 7, .. })), 1, "{name}");
        assert_eq!(
            count(&|k| matches!(k, EventKind::TokensDecoded { request_ids } if request_ids.contains(&7))),
            3,
            "{name}"
        );
        assert_eq!(count(&|k| matches!(k, EventKind::Finish { request_id: 7, .. })), 1, "{name}");
        let ledger = ServiceLedger::new(&out.log, &CostModel::weighted(1.0, 2.0));
        assert_eq!(ledger.total_service(ClientId(0)), 10.0, "{name}");
    }
}

#[test]
fn empty_arrivals_leave_an_empty_log() {
    let out = run(&EngineConfig::default(), &mut Fcfs::new(), Vec::new()).unwrap();
    assert!(out.log.events.is_empty());
    assert_eq!(out.stats.steps, 0);
}

#[test]
fn two_large_requests_run_one_after_the_other() {
    let limits = SystemLimits::new(10, 10, 30).unwrap();
    let config = EngineConfig {
        limits,
        ..EngineConfig::default()
    };
    // Each reserves 6 + 10 = 16 > 15 under the conservative policy.
    let out = run(&config, &mut Fcfs::new(), vec![req(0, 0, 0.0, 6, 4), req(1, 1, 0.0, 6, 4)]).unwrap();
    let time_of = |want: fn(&EventKind) -> bool| out.log.events.iter().find(|e| want(&e.kind)).unwrap().time;
    let first_finish = time_of(|k| matches!(k, EventKind::Finish { request_id: 0, .. }));
    let second_dispatch = time_of(|k| matches!(k, EventKind::Dispatch { request_id: 1, .. }));
    assert!(second_dispatch >= first_finish);
    assert_eq!(out.stats.peak_reserved, 16);
}

#[test]
fn decode_step_advances_clock_and_every_request() {
    let config = EngineConfig {
        timing: flat_timing(0.05),
        ..EngineConfig::default()
    };
    let arrivals = (0..3).map(|i| req(i, i as u32, 0.0, 8, 5)).collect();
    let mut fcfs = Fcfs::new();
    let mut engine = Engine::new(config, &mut fcfs, arrivals).unwrap();
    engine.step().unwrap();
    assert!((engine.clock() - 0.05).abs() < 1e-12);
    engine.step().unwrap();
    assert!((engine.clock() - 0.10).abs() < 1e-12);
    assert!(engine.requests().iter().all(|r| r.generated == 2));
}

#[test]
fn idle_engine_jumps_to_the_next_arrival() {
    let config = EngineConfig {
        timing: flat_timing(0.05),
        ..EngineConfig::default()
    };
    let mut fcfs = Fcfs::new();
    let mut engine = Engine::new(config, &mut fcfs, vec![req(0, 0, 5.0, 8, 2)]).unwrap();
    assert_eq!(engine.step().unwrap(), StepOutcome::Continue);
    assert!((engine.clock() - 5.05).abs() < 1e-12);
    assert_eq!(engine.requests()[0].first_token_time, Some(engine.clock()));
}

#[test]
fn memory_is_released_before_the_next_admission() {
    // The pool holds exactly one request at a time.
    let limits = SystemLimits::new(4, 4, 8).unwrap();
    let config = EngineConfig {
        limits,
        timing: flat_timing(1.0),
        ..EngineConfig::default()
    };
    let out = run(&config, &mut Fcfs::new(), vec![req(0, 0, 0.0, 4, 2), req(1, 0, 0.0, 4, 2)]).unwrap();
    let finish = out.requests[0].finish_time.unwrap();
    assert_eq!(finish, 2.0);
    assert_eq!(out.requests[1].dispatch_time, Some(finish));
}

#[test]
fn limits_must_hold_the_largest_request() {
    // A pool smaller than max_input + max_output could never admit some
    // valid requests, so such limits are refused up front.
    assert!(SystemLimits::new(10, 10, 15).is_err());
    assert!(SystemLimits::new(10, 10, 20).is_ok());
}

#[test]
fn sixth_request_in_a_minute_is_rate_limited() {
    let arrivals = (0..6).map(|i| req(i, 0, i as f64, 1, 1)).collect();
    let out = run(&EngineConfig::default(), &mut build("rpm(5)"), arrivals).unwrap();
    let limited: Vec<u64> = out
        .log
        .events
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::Rejected {
                request_id,
                reason: RejectReason::RateLimited,
                ..
            } => Some(request_id),
            _ => None,
        })
        .collect();
    assert_eq!(limited, vec![5]);
}

#[test]
fn arrivals_out_of_order_are_a_configuration_error() {
    let r = run(
        &EngineConfig::default(),
        &mut Fcfs::new(),
        vec![req(0, 0, 2.0, 1, 1), req(1, 0, 1.0, 1, 1)],
    );
    assert!(matches!(r, Err(EngineError::ArrivalOrder { request_id: 1, .. })));
}

#[test]
fn zero_cadence_is_rejected() {
    let config = EngineConfig {
        admit_every_k_steps: 0,
        ..EngineConfig::default()
    };
    assert!(matches!(
        run(&config, &mut Fcfs::new(), Vec::new()),
        Err(EngineError::Config(_))
    ));
}

#[test]
fn cadence_delays_admission_while_the_batch_runs() {
    let config = EngineConfig {
        timing: flat_timing(1.0),
        admit_every_k_steps: 4,
        ..EngineConfig::default()
    };
    let out = run(&config, &mut Fcfs::new(), vec![req(0, 0, 0.0, 1, 10), req(1, 1, 0.5, 1, 10)]).unwrap();
    // The second request waits for step 4 although memory is free.
    assert_eq!(out.requests[1].dispatch_time, Some(4.0));
}

/// Admits one request per round even when more would fit.
struct Stingy {
    queue: std::collections::VecDeque<usize>,
}

impl Scheduler for Stingy {
    fn name(&self) -> String {
        "stingy".into()
    }
    fn on_arrival(&mut self, key: usize, _request: &Request, _now: f64) -> ArrivalDecision {
        self.queue.push_back(key);
        ArrivalDecision::Enqueued
    }
    fn select_new_requests(&mut self, requests: &[Request], batch: &mut BatchBuilder<'_>) {
        if let Some(&k) = self.queue.front() {
            if batch.try_admit(k, &requests[k]) {
                self.queue.pop_front();
            }
        }
    }
    fn on_tokens_decoded(&mut self, _requests: &[Request], _decoded: &[usize]) {}
    fn on_request_finished(&mut self, _request: &Request) {}
    fn queued_len(&self) -> usize {
        self.queue.len()
    }
    fn peek_next(&self, _requests: &[Request]) -> Option<usize> {
        self.queue.front().copied()
    }
}

#[test]
fn stopping_with_a_fitting_request_queued_breaks_the_contract() {
    let mut s = Stingy {
        queue: Default::default(),
    };
    let r = run(
        &EngineConfig::default(),
        &mut s,
        vec![req(0, 0, 0.0, 4, 4), req(1, 0, 0.0, 4, 4)],
    );
    match r {
        Err(EngineError::ContractViolation { scheduler, detail, .. }) => {
            assert_eq!(scheduler, "stingy");
            assert!(detail.contains("fitting candidate"), "{detail}");
        }
        other => panic!("expected a contract violation, got {other:?}"),
    }
}

#[test]
fn horizon_stops_the_run() {
    let config = EngineConfig {
        timing: flat_timing(1.0),
        horizon: Some(3.0),
        ..EngineConfig::default()
    };
    let out = run(&config, &mut Fcfs::new(), vec![req(0, 0, 0.0, 1, 10), req(1, 0, 5.0, 1, 1)]).unwrap();
    assert!(out.log.last_time() <= 3.0 + 1e-12);
    assert_eq!(out.requests[0].generated, 3);
    assert!(out.requests[1].dispatch_time.is_none());
}
