//! Runtime checks of the scheduling guarantees, evaluated on event logs.
//!
//! Interval monitors are exact rather than sampled: for two clients the
//! largest service gap over all sub-intervals of a common backlogged
//! interval is the range of `W_f(0,p) - W_g(0,p)` over that interval, and
//! the worst shortfall of a backlogged client is the largest drawdown of
//! the same difference.

use super::ledger::ServiceLedger;
use crate::cost::CostModel;
use crate::engine::{run, EngineConfig, EngineError, EventKind, EventLog, ReservationPolicy, TimingModel};
use crate::schedulers::Scheduler;
use crate::types::{ClientId, Request, SystemLimits};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

/// Absolute tolerance, in service units, of every bound comparison.
pub const TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// Informational: the bound depends on an empirical estimate.
    Warn,
    NotApplicable,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Warn => "WARN",
            Status::NotApplicable => "N/A",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub monitor: String,
    pub status: Status,
    /// Worst observed value of the monitored quantity.
    pub observed: f64,
    pub bound: f64,
    /// Where the worst value was observed.
    pub at_time: Option<f64>,
    pub detail: String,
}

impl Verdict {
    fn new(monitor: &str, status: Status, observed: f64, bound: f64, at_time: Option<f64>, detail: String) -> Self {
        Self {
            monitor: monitor.into(),
            status,
            observed,
            bound,
            at_time,
            detail,
        }
    }

    fn not_applicable(monitor: &str, detail: &str) -> Self {
        Self::new(monitor, Status::NotApplicable, 0.0, 0.0, None, detail.into())
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<5} {:<20} observed={:.3} bound={:.3}",
            self.status, self.monitor, self.observed, self.bound
        )?;
        if let Some(t) = self.at_time {
            write!(f, " at t={t:.3}")?;
        }
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

fn verdict_for(monitor: &str, observed: f64, bound: f64, at: Option<f64>, detail: String) -> Verdict {
    let status = if observed <= bound + TOLERANCE { Status::Pass } else { Status::Fail };
    Verdict::new(monitor, status, observed, bound, at, detail)
}

/// Spread of counters over queued clients at every counter snapshot.
pub fn verify_counter_invariant(log: &EventLog, bound: f64) -> Verdict {
    const NAME: &str = "counter_invariant";
    if !log.has_counter_snapshots() {
        return Verdict::not_applicable(NAME, "scheduler keeps no counters");
    }
    let mut worst = (0.0, None);
    let mut checked = 0usize;
    for e in &log.events {
        let EventKind::CounterSnapshot { counters, queued } = &e.kind else {
            continue;
        };
        if queued.is_empty() {
            continue;
        }
        checked += 1;
        let vals = queued.iter().map(|c| counters.get(c.index()).copied().unwrap_or(0.0));
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if hi - lo > worst.0 {
            worst = (hi - lo, Some(e.time));
        }
    }
    verdict_for(NAME, worst.0, bound, worst.1, format!("{checked} snapshots with queued clients"))
}

/// The smallest counter among queued clients never decreases between
/// consecutive snapshots that both have queued clients.
pub fn verify_min_counter_monotone(log: &EventLog) -> Verdict {
    const NAME: &str = "min_counter_monotone";
    if !log.has_counter_snapshots() {
        return Verdict::not_applicable(NAME, "scheduler keeps no counters");
    }
    let mut prev: Option<f64> = None;
    let mut worst = (0.0, None);
    for e in &log.events {
        let EventKind::CounterSnapshot { counters, queued } = &e.kind else {
            continue;
        };
        let min = queued
            .iter()
            .map(|c| counters.get(c.index()).copied().unwrap_or(0.0))
            .reduce(f64::min);
        if let (Some(p), Some(m)) = (prev, min) {
            if p - m > worst.0 {
                worst = (p - m, Some(e.time));
            }
        }
        prev = min;
    }
    verdict_for(NAME, worst.0, 0.0, worst.1, "largest decrease".into())
}

/// Intersections of two sorted lists of disjoint `[start, end)` ranges.
fn intersect(a: &[(usize, usize)], b: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        let s = a[i].0.max(b[j].0);
        let e = a[i].1.min(b[j].1);
        if s < e {
            out.push((s, e));
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

/// For every pair of clients and every interval during which both stay
/// backlogged, `|W_f - W_g|` must not exceed `gap_bound`.
pub fn verify_backlogged_fairness(ledger: &ServiceLedger, gap_bound: f64) -> Verdict {
    const NAME: &str = "backlogged_gap";
    let n = ledger.num_clients();
    let mut worst = (0.0, None, String::new());
    let mut intervals = 0usize;
    for f in 0..n {
        for g in f + 1..n {
            let (cf, cg) = (ClientId(f as u32), ClientId(g as u32));
            for (s, e) in intersect(ledger.backlog_intervals(cf), ledger.backlog_intervals(cg)) {
                intervals += 1;
                let (mut lo, mut hi) = ((f64::INFINITY, 0), (f64::NEG_INFINITY, 0));
                ledger.walk_difference(cf, cg, s, e, |p, d| {
                    if d < lo.0 {
                        lo = (d, p);
                    }
                    if d > hi.0 {
                        hi = (d, p);
                    }
                });
                if hi.0 - lo.0 > worst.0 {
                    let at = ledger.time_at(lo.1.max(hi.1));
                    worst = (hi.0 - lo.0, Some(at), format!("{cf} vs {cg}"));
                }
            }
        }
    }
    if n < 2 {
        return Verdict::new(NAME, Status::Pass, 0.0, gap_bound, None, "single client".into());
    }
    let detail = format!("{intervals} common backlogged intervals; worst pair {}", worst.2);
    verdict_for(NAME, worst.0, gap_bound, worst.1, detail)
}

/// A client backlogged over an interval receives at least the service of
/// any other client in it, minus `slack`.
pub fn verify_no_punish(ledger: &ServiceLedger, slack: f64) -> Verdict {
    const NAME: &str = "no_punish";
    let n = ledger.num_clients();
    let mut worst = (0.0, None, String::new());
    for f in 0..n {
        let cf = ClientId(f as u32);
        for g in (0..n).filter(|&g| g != f) {
            let cg = ClientId(g as u32);
            for &(s, e) in ledger.backlog_intervals(cf) {
                let mut peak = f64::NEG_INFINITY;
                ledger.walk_difference(cf, cg, s, e, |p, d| {
                    peak = peak.max(d);
                    if peak - d > worst.0 {
                        worst = (peak - d, Some(ledger.time_at(p)), format!("{cf} behind {cg}"));
                    }
                });
            }
        }
    }
    verdict_for(NAME, worst.0, slack, worst.1, worst.2)
}

/// Range of the total service rate over busy time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityProfile {
    /// Lowest rate over full busy windows, service units per second.
    pub a: f64,
    pub b: f64,
    pub window: f64,
}

/// Busy periods as time ranges: some request queued or running.
fn busy_periods(log: &EventLog) -> Vec<(f64, f64)> {
    let mut open = 0i64;
    let mut start = 0.0;
    let mut out = Vec::new();
    for e in &log.events {
        let delta = match e.kind {
            EventKind::Arrival { .. } => 1,
            EventKind::Rejected { .. } | EventKind::Finish { .. } => -1,
            _ => 0,
        };
        if delta == 0 {
            continue;
        }
        if open == 0 && delta > 0 {
            start = e.time;
        }
        open += delta;
        if open == 0 {
            out.push((start, e.time));
        }
    }
    if open > 0 {
        out.push((start, log.last_time()));
    }
    out
}

/// Estimates the capacity range from aligned windows of `window` seconds
/// inside busy periods. Falls back to the mean busy rate when no full
/// window exists.
pub fn capacity_profile(ledger: &ServiceLedger, log: &EventLog, window: f64) -> Option<CapacityProfile> {
    let clients: Vec<ClientId> = (0..ledger.num_clients()).map(|c| ClientId(c as u32)).collect();
    let total = |t1: f64, t2: f64| -> f64 { clients.iter().map(|&c| ledger.service_in_window(c, t1, t2)).sum() };
    let (mut a, mut b) = (f64::INFINITY, 0.0f64);
    let (mut busy_time, mut busy_service) = (0.0, 0.0);
    for (s, e) in busy_periods(log) {
        busy_time += e - s;
        busy_service += total(s, e);
        let mut t = s;
        while t + window <= e {
            let rate = total(t, t + window) / window;
            a = a.min(rate);
            b = b.max(rate);
            t += window;
        }
    }
    if busy_time <= 0.0 {
        return None;
    }
    if !a.is_finite() {
        let mean = busy_service / busy_time;
        return Some(CapacityProfile { a: mean, b: mean, window: busy_time });
    }
    Some(CapacityProfile { a, b, window })
}

/// Requests whose client had nothing queued or running when they arrived
/// are dispatched within `2 (n - 1) U / a`.
pub fn verify_dispatch_latency(ledger: &ServiceLedger, log: &EventLog, bound_u: f64, capacity: &CapacityProfile) -> Verdict {
    const NAME: &str = "dispatch_latency";
    let n = ledger.num_clients();
    if n < 2 {
        return Verdict::not_applicable(NAME, "single client");
    }
    let bound = 2.0 * (n as f64 - 1.0) * bound_u / capacity.a;
    let mut queued = vec![0u32; n];
    let mut running = vec![0u32; n];
    let mut qualifying: HashMap<u64, f64> = HashMap::new();
    let mut worst = (0.0, None, 0u64);
    let mut count = 0usize;
    for e in &log.events {
        match &e.kind {
            EventKind::Arrival {
                request_id,
                client,
                arrival_time,
                ..
            } => {
                let c = client.index();
                if queued[c] == 0 && running[c] == 0 {
                    qualifying.insert(*request_id, *arrival_time);
                }
                queued[c] += 1;
            }
            EventKind::Rejected { request_id, client, .. } => {
                queued[client.index()] -= 1;
                qualifying.remove(request_id);
            }
            EventKind::Dispatch { request_id, client, .. } => {
                queued[client.index()] -= 1;
                running[client.index()] += 1;
                if let Some(a) = qualifying.remove(request_id) {
                    count += 1;
                    let wait = e.time - a;
                    if wait > worst.0 {
                        worst = (wait, Some(a), *request_id);
                    }
                }
            }
            EventKind::Finish { client, .. } => running[client.index()] -= 1,
            _ => {}
        }
    }
    if count == 0 {
        return Verdict::not_applicable(NAME, "no request arrived to an idle client");
    }
    let status = if worst.0 <= bound { Status::Pass } else { Status::Warn };
    let detail = format!(
        "{count} requests; worst is request {} (a = {:.1} units/s, ratio {:.3})",
        worst.2,
        capacity.a,
        worst.0 / bound
    );
    Verdict::new(NAME, status, worst.0, bound, worst.1, detail)
}

/// Replays the log against its header: lifecycle order, token
/// conservation, memory never over the pool and non-decreasing time.
pub fn verify_log_integrity(log: &EventLog) -> Verdict {
    const NAME: &str = "log_integrity";
    #[derive(PartialEq)]
    enum St {
        Queued,
        Running,
        Done,
    }
    let limits = log.header.limits;
    let policy = log.header.reservation;
    let capacity = u64::from(limits.pool_tokens);
    let mut state: HashMap<u64, (St, Request, u64)> = HashMap::new();
    let mut reserved = 0u64;
    let mut peak = 0u64;
    let mut last = f64::NEG_INFINITY;
    let fail = |t: f64, msg: String| Verdict::new(NAME, Status::Fail, 1.0, 0.0, Some(t), msg);
    for e in &log.events {
        if e.time < last {
            return fail(e.time, format!("time went backwards from {last}"));
        }
        last = e.time;
        match &e.kind {
            EventKind::Arrival {
                request_id,
                client,
                arrival_time,
                input_len,
                output_len,
            } => {
                let r = Request::new(*request_id, *client, *arrival_time, *input_len, *output_len);
                if state.insert(*request_id, (St::Queued, r, 0)).is_some() {
                    return fail(e.time, format!("request {request_id} arrived twice"));
                }
            }
            EventKind::Rejected { request_id, .. } => match state.get_mut(request_id) {
                Some(s) if s.0 == St::Queued => s.0 = St::Done,
                _ => return fail(e.time, format!("request {request_id} rejected while not queued")),
            },
            EventKind::Dispatch { request_id, .. } => match state.get_mut(request_id) {
                Some(s) if s.0 == St::Queued => {
                    s.0 = St::Running;
                    reserved += policy.tokens(&s.1, &limits);
                    peak = peak.max(reserved);
                    if reserved > capacity {
                        return fail(e.time, format!("reserved {reserved} tokens of {capacity}"));
                    }
                }
                _ => return fail(e.time, format!("request {request_id} dispatched while not queued")),
            },
            EventKind::TokensDecoded { request_ids } => {
                for id in request_ids {
                    match state.get_mut(id) {
                        Some(s) if s.0 == St::Running && s.2 < u64::from(s.1.true_output_len) => s.2 += 1,
                        _ => return fail(e.time, format!("request {id} decoded while not running or past its length")),
                    }
                }
            }
            EventKind::Finish { request_id, .. } => match state.get_mut(request_id) {
                Some(s) if s.0 == St::Running && s.2 == u64::from(s.1.true_output_len) => {
                    s.0 = St::Done;
                    reserved -= policy.tokens(&s.1, &limits);
                }
                _ => return fail(e.time, format!("request {request_id} finished early or while not running")),
            },
            EventKind::PrefillDone { .. } | EventKind::CounterSnapshot { .. } => {}
        }
    }
    Verdict::new(
        NAME,
        Status::Pass,
        peak as f64,
        capacity as f64,
        None,
        format!("{} requests; observed is peak reserved tokens", state.len()),
    )
}

#[derive(Debug, Error)]
pub enum LowerBoundError {
    #[error("infeasible construction: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundOutcome {
    /// `W_f - W_g` from g's arrival until just before g's first dispatch.
    pub gap: f64,
    /// `w_q * (M - k)` for a first batch of `k` single-token prompts.
    pub expected: f64,
    pub batch_requests: u32,
    pub output_len: u32,
    pub peak_reserved: u64,
}

/// Runs the adversarial two-client trace that defeats every work-conserving
/// non-preemptive scheduler.
///
/// Client f sends `2k` requests with a one-token prompt and `q` output
/// tokens at time 0, where `q` is the largest output length with
/// `k (1 + q) = M`, so the first batch fills the pool exactly. Client g
/// sends `k` identical requests an instant later and cannot be admitted
/// until that batch finishes, while f keeps receiving `w_q` per token.
pub fn lower_bound_construction(
    limits: &SystemLimits,
    cost: &CostModel,
    policy: ReservationPolicy,
    scheduler: &mut dyn Scheduler,
) -> Result<LowerBoundOutcome, LowerBoundError> {
    limits.validate().map_err(|e| LowerBoundError::Infeasible(e.to_string()))?;
    let CostModel::WeightedTokens { output_weight, .. } = *cost else {
        return Err(LowerBoundError::Infeasible("needs a token-weighted cost".into()));
    };
    let m = limits.pool_tokens;
    let q = (1..=limits.max_output.min(m.saturating_sub(1)))
        .rev()
        .find(|q| m % (q + 1) == 0)
        .ok_or_else(|| LowerBoundError::Infeasible(format!("no output length q with (q + 1) | {m}")))?;
    let k = m / (q + 1);
    let epsilon = 0.5;
    let mut arrivals: Vec<Request> = (0..2 * k)
        .map(|i| Request::new(u64::from(i), ClientId(0), 0.0, 1, q))
        .collect();
    arrivals.extend((0..k).map(|i| Request::new(u64::from(2 * k + i), ClientId(1), epsilon, 1, q)));
    let config = EngineConfig {
        limits: *limits,
        timing: TimingModel {
            prefill_seconds_per_token: 0.0,
            decode_step_base_seconds: 1.0,
            decode_step_seconds_per_batch_token: 0.0,
        },
        reservation_policy: policy,
        ..EngineConfig::default()
    };
    let out = run(&config, scheduler, arrivals)?;
    let log = &out.log;
    let g = ClientId(1);
    let arrival = log
        .events
        .iter()
        .position(|e| matches!(e.kind, EventKind::Arrival { client, .. } if client == g))
        .expect("g arrives");
    let dispatch = log
        .events
        .iter()
        .position(|e| matches!(e.kind, EventKind::Dispatch { client, .. } if client == g))
        .expect("g is served eventually");
    let ledger = ServiceLedger::new(log, cost);
    let end = dispatch - 1;
    let gap = ledger.service_between(ClientId(0), arrival, end) - ledger.service_between(g, arrival, end);
    Ok(LowerBoundOutcome {
        gap,
        expected: output_weight * f64::from(m - k),
        batch_requests: k,
        output_len: q,
        peak_reserved: out.stats.peak_reserved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{LogHeader, LOG_FORMAT, LOG_VERSION};
    use crate::schedulers::{Fcfs, Vtc};

    fn empty_log() -> EventLog {
        EventLog::new(LogHeader {
            format: LOG_FORMAT.into(),
            version: LOG_VERSION,
            scheduler: "test".into(),
            limits: SystemLimits::default(),
            reservation: ReservationPolicy::Conservative,
            admit_every_k_steps: 1,
        })
    }

    #[test]
    fn corrupted_snapshot_fails_with_time() {
        let mut log = empty_log();
        log.push(
            1.0,
            EventKind::CounterSnapshot {
                counters: vec![0.0, 5.0],
                queued: vec![ClientId(0), ClientId(1)],
            },
        );
        log.push(
            2.0,
            EventKind::CounterSnapshot {
                counters: vec![0.0, 500.0, 9999.0],
                queued: vec![ClientId(0), ClientId(1)],
            },
        );
        let v = verify_counter_invariant(&log, 100.0);
        assert_eq!(v.status, Status::Fail);
        assert_eq!(v.observed, 500.0);
        assert_eq!(v.at_time, Some(2.0));
        assert_eq!(verify_counter_invariant(&log, 500.0).status, Status::Pass);
    }

    #[test]
    fn fcfs_has_no_counters() {
        assert_eq!(verify_counter_invariant(&empty_log(), 1.0).status, Status::NotApplicable);
    }

    #[test]
    fn intersections() {
        assert_eq!(intersect(&[(0, 5), (8, 12)], &[(3, 9), (11, 20)]), vec![(3, 5), (8, 9), (11, 12)]);
        assert!(intersect(&[(0, 2)], &[(2, 4)]).is_empty());
    }

    #[test]
    fn lower_bound_arithmetic() {
        let limits = SystemLimits::new(1, 99, 1000).unwrap();
        let out = lower_bound_construction(
            &limits,
            &CostModel::weighted(1.0, 2.0),
            ReservationPolicy::OracleExact,
            &mut Vtc::standard(CostModel::weighted(1.0, 2.0)),
        )
        .unwrap();
        assert_eq!((out.batch_requests, out.output_len), (10, 99));
        assert_eq!(out.expected, 1980.0);
        assert_eq!(out.gap, 1980.0);
        assert_eq!(out.peak_reserved, 1000);
    }

    #[test]
    fn lower_bound_needs_a_fitting_request() {
        let bad = SystemLimits {
            max_input: 10,
            max_output: 10,
            pool_tokens: 5,
        };
        let r = lower_bound_construction(&bad, &CostModel::default(), ReservationPolicy::OracleExact, &mut Fcfs::new());
        assert!(matches!(r, Err(LowerBoundError::Infeasible(_))));
    }
}
