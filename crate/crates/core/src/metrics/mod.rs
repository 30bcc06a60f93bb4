//! Service accounting, fairness statistics and guarantee monitors.

mod ledger;
mod monitors;
mod report;

pub use ledger::ServiceLedger;
pub use monitors::{
    capacity_profile, lower_bound_construction, verify_backlogged_fairness, verify_counter_invariant,
    verify_dispatch_latency, verify_log_integrity, verify_min_counter_monotone, verify_no_punish,
    CapacityProfile, LowerBoundError, LowerBoundOutcome, Status, Verdict, TOLERANCE,
};
pub use report::{
    service_difference, ClientSeries, ClientSummary, FairnessReport, ReportConfig, SUMMARY_HEADER,
};

use crate::cost::CostModel;
use crate::engine::EventLog;

/// Window, in seconds, used to estimate the lower capacity bound.
pub const CAPACITY_WINDOW_SECONDS: f64 = 10.0;

/// Runs every log monitor. `weights` normalizes service for weighted
/// schedulers; the bound `U` is derived from the cost model, the log's
/// limits and the smallest weight.
pub fn standard_verdicts(log: &EventLog, cost: &CostModel, weights: &[f64]) -> Vec<Verdict> {
    let ledger = ServiceLedger::with_weights(log, cost, weights);
    let u = cost.fairness_bound(&log.header.limits).for_weights(weights);
    let mut out = vec![
        verify_log_integrity(log),
        verify_counter_invariant(log, u.value),
        verify_backlogged_fairness(&ledger, u.backlogged_gap()),
        verify_no_punish(&ledger, u.no_punish_slack()),
    ];
    match capacity_profile(&ledger, log, CAPACITY_WINDOW_SECONDS) {
        Some(cap) => out.push(verify_dispatch_latency(&ledger, log, u.value, &cap)),
        None => out.push(Verdict {
            monitor: "dispatch_latency".into(),
            status: Status::NotApplicable,
            observed: 0.0,
            bound: 0.0,
            at_time: None,
            detail: "server never busy".into(),
        }),
    }
    out
}
