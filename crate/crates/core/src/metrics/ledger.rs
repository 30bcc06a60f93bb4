//! Cumulative service curves replayed from an event log.
//!
//! Positions index the log: "after position `p`" is the state once
//! `events[p]` has been applied. A client's input tokens count at its
//! request's `dispatch`, each output token at the `tokens_decoded` record
//! that produced it. `W_i(p1, p2)` is the service of events in `(p1, p2]`.

use crate::cost::CostModel;
use crate::engine::{EventKind, EventLog};
use crate::types::ClientId;
use std::collections::HashMap;

#[derive(Debug, Clone, Copy)]
struct RequestInfo {
    client: ClientId,
    input_len: u32,
}

/// Positions where a client's cumulative service changed, with the value
/// after each.
#[derive(Debug, Clone, Default)]
struct Curve {
    pos: Vec<usize>,
    cum: Vec<f64>,
}

impl Curve {
    fn add(&mut self, pos: usize, amount: f64) {
        let last = self.cum.last().copied().unwrap_or(0.0);
        if self.pos.last() == Some(&pos) {
            *self.cum.last_mut().unwrap() = last + amount;
        } else {
            self.pos.push(pos);
            self.cum.push(last + amount);
        }
    }

    /// Cumulative service after position `p`.
    fn at(&self, p: usize) -> f64 {
        match self.pos.partition_point(|&x| x <= p) {
            0 => 0.0,
            i => self.cum[i - 1],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceLedger {
    times: Vec<f64>,
    curves: Vec<Curve>,
    weights: Vec<f64>,
    /// Per client `(arrival time, full request cost)`, in arrival order.
    requested: Vec<Vec<(f64, f64)>>,
    /// Per client maximal position ranges `[start, end)` after which the
    /// client had at least one queued request.
    backlog: Vec<Vec<(usize, usize)>>,
    requests: HashMap<u64, RequestInfo>,
    tokens_processed: u64,
}

impl ServiceLedger {
    pub fn new(log: &EventLog, cost: &CostModel) -> Self {
        Self::with_weights(log, cost, &[])
    }

    /// Like [`ServiceLedger::new`], but every client's service is divided by
    /// its weight (missing weights are 1).
    pub fn with_weights(log: &EventLog, cost: &CostModel, weights: &[f64]) -> Self {
        let mut ledger = ServiceLedger {
            times: Vec::with_capacity(log.events.len()),
            curves: Vec::new(),
            weights: weights.to_vec(),
            requested: Vec::new(),
            backlog: Vec::new(),
            requests: HashMap::new(),
            tokens_processed: 0,
        };
        let mut generated: HashMap<u64, u32> = HashMap::new();
        let mut queued: Vec<u32> = Vec::new();
        let mut open: Vec<Option<usize>> = Vec::new();

        let grow = |l: &mut ServiceLedger, q: &mut Vec<u32>, o: &mut Vec<Option<usize>>, c: ClientId| {
            let n = c.index() + 1;
            if l.curves.len() < n {
                l.curves.resize_with(n, Curve::default);
                l.requested.resize_with(n, Vec::new);
                l.backlog.resize_with(n, Vec::new);
                q.resize(n, 0);
                o.resize(n, None);
            }
        };

        for (p, e) in log.events.iter().enumerate() {
            ledger.times.push(e.time);
            match &e.kind {
                EventKind::Arrival {
                    request_id,
                    client,
                    arrival_time,
                    input_len,
                    output_len,
                } => {
                    grow(&mut ledger, &mut queued, &mut open, *client);
                    ledger.requests.insert(
                        *request_id,
                        RequestInfo {
                            client: *client,
                            input_len: *input_len,
                        },
                    );
                    let c = client.index();
                    ledger.requested[c].push((*arrival_time, cost.request_cost(*input_len, *output_len)));
                    queued[c] += 1;
                    if queued[c] == 1 {
                        open[c] = Some(p);
                    }
                }
                EventKind::Dispatch { request_id, client, .. } | EventKind::Rejected { request_id, client, .. } => {
                    let c = client.index();
                    if let EventKind::Dispatch { .. } = e.kind {
                        let input = ledger.requests.get(request_id).map_or(0, |r| r.input_len);
                        let amount = cost.admission_cost(input) / ledger.weight(*client);
                        ledger.curves[c].add(p, amount);
                        ledger.tokens_processed += u64::from(input);
                    }
                    queued[c] = queued[c].saturating_sub(1);
                    if queued[c] == 0 {
                        if let Some(s) = open[c].take() {
                            ledger.backlog[c].push((s, p));
                        }
                    }
                }
                EventKind::TokensDecoded { request_ids } => {
                    for id in request_ids {
                        let Some(info) = ledger.requests.get(id).copied() else {
                            continue;
                        };
                        let g = generated.entry(*id).or_insert(0);
                        *g += 1;
                        let amount = cost.marginal_unchecked(info.input_len, *g) / ledger.weight(info.client);
                        ledger.curves[info.client.index()].add(p, amount);
                        ledger.tokens_processed += 1;
                    }
                }
                EventKind::PrefillDone { .. } | EventKind::Finish { .. } | EventKind::CounterSnapshot { .. } => {}
            }
        }
        let end = log.events.len();
        for (c, o) in open.iter_mut().enumerate() {
            if let Some(s) = o.take() {
                ledger.backlog[c].push((s, end));
            }
        }
        ledger
    }

    pub fn num_clients(&self) -> usize {
        self.curves.len()
    }

    pub fn num_positions(&self) -> usize {
        self.times.len()
    }

    pub fn time_at(&self, p: usize) -> f64 {
        self.times[p]
    }

    pub fn end_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn weight(&self, client: ClientId) -> f64 {
        self.weights.get(client.index()).copied().unwrap_or(1.0)
    }

    /// Input plus output tokens processed over the whole log.
    pub fn tokens_processed(&self) -> u64 {
        self.tokens_processed
    }

    fn curve(&self, client: ClientId) -> Option<&Curve> {
        self.curves.get(client.index())
    }

    /// `W_i(0, ·)` after position `p`.
    pub fn service_after(&self, client: ClientId, p: usize) -> f64 {
        self.curve(client).map_or(0.0, |c| c.at(p))
    }

    /// Service of events in positions `(p1, p2]`.
    pub fn service_between(&self, client: ClientId, p1: usize, p2: usize) -> f64 {
        self.service_after(client, p2) - self.service_after(client, p1)
    }

    /// `W_i(0, t)`: service of all events at times `<= t`.
    pub fn service_until(&self, client: ClientId, t: f64) -> f64 {
        match self.times.partition_point(|&x| x <= t) {
            0 => 0.0,
            i => self.service_after(client, i - 1),
        }
    }

    /// `W_i(t1, t2)`: service of events at times in `(t1, t2]`.
    pub fn service_in_window(&self, client: ClientId, t1: f64, t2: f64) -> f64 {
        if t2 <= t1 {
            return 0.0;
        }
        self.service_until(client, t2) - self.service_until(client, t1)
    }

    pub fn total_service(&self, client: ClientId) -> f64 {
        self.curve(client).and_then(|c| c.cum.last().copied()).unwrap_or(0.0)
    }

    /// Service of the requests `client` sent at times in `(t1, t2]`, each at
    /// its full cost, normalized by weight.
    pub fn requested_in_window(&self, client: ClientId, t1: f64, t2: f64) -> f64 {
        let Some(reqs) = self.requested.get(client.index()) else {
            return 0.0;
        };
        let lo = reqs.partition_point(|&(t, _)| t <= t1);
        let hi = reqs.partition_point(|&(t, _)| t <= t2);
        reqs[lo..hi].iter().map(|&(_, c)| c).sum::<f64>() / self.weight(client)
    }

    /// Maximal position ranges `[start, end)` during which `client` had a
    /// queued request after every position.
    pub fn backlog_intervals(&self, client: ClientId) -> &[(usize, usize)] {
        self.backlog.get(client.index()).map_or(&[], |v| v.as_slice())
    }

    pub fn is_backlogged_after(&self, client: ClientId, p: usize) -> bool {
        let iv = self.backlog_intervals(client);
        let i = iv.partition_point(|&(s, _)| s <= p);
        i > 0 && p < iv[i - 1].1
    }

    /// Visits `W_f(0,p) - W_g(0,p)` at position `start` and at every later
    /// position before `end` where it changes.
    pub(crate) fn walk_difference(
        &self,
        f: ClientId,
        g: ClientId,
        start: usize,
        end: usize,
        mut visit: impl FnMut(usize, f64),
    ) {
        let empty = Curve::default();
        let cf = self.curve(f).unwrap_or(&empty);
        let cg = self.curve(g).unwrap_or(&empty);
        let (mut wf, mut wg) = (cf.at(start), cg.at(start));
        visit(start, wf - wg);
        let mut i = cf.pos.partition_point(|&x| x <= start);
        let mut j = cg.pos.partition_point(|&x| x <= start);
        loop {
            let pf = cf.pos.get(i).copied().filter(|&x| x < end);
            let pg = cg.pos.get(j).copied().filter(|&x| x < end);
            let p = match (pf, pg) {
                (None, None) => break,
                (Some(a), Some(b)) => a.min(b),
                (Some(a), None) => a,
                (None, Some(b)) => b,
            };
            if pf == Some(p) {
                wf = cf.cum[i];
                i += 1;
            }
            if pg == Some(p) {
                wg = cg.cum[j];
                j += 1;
            }
            visit(p, wf - wg);
        }
    }

    /// `max_t max_{i,j} |W_i(0,t) - W_j(0,t)|` over every log position,
    /// with the time it is reached.
    pub fn max_accumulated_difference(&self) -> (f64, f64) {
        let n = self.num_clients();
        if n < 2 {
            return (0.0, 0.0);
        }
        let mut idx = vec![0usize; n];
        let mut cur = vec![0.0f64; n];
        let mut changes: Vec<usize> = self.curves.iter().flat_map(|c| c.pos.iter().copied()).collect();
        changes.sort_unstable();
        changes.dedup();
        let mut best = (0.0, 0.0);
        for p in changes {
            for c in 0..n {
                let curve = &self.curves[c];
                while idx[c] < curve.pos.len() && curve.pos[idx[c]] <= p {
                    cur[c] = curve.cum[idx[c]];
                    idx[c] += 1;
                }
            }
            let (lo, hi) = cur
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            if hi - lo > best.0 {
                best = (hi - lo, self.times[p]);
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run, EngineConfig, TimingModel};
    use crate::schedulers::Fcfs;
    use crate::types::{Request, SystemLimits};

    fn tiny_run(reqs: Vec<Request>) -> EventLog {
        let config = EngineConfig {
            limits: SystemLimits::new(8, 8, 32).unwrap(),
            timing: TimingModel {
                prefill_seconds_per_token: 0.0,
                decode_step_base_seconds: 1.0,
                decode_step_seconds_per_batch_token: 0.0,
            },
            ..Default::default()
        };
        run(&config, &mut Fcfs::new(), reqs).unwrap().log
    }

    #[test]
    fn single_request_total() {
        let log = tiny_run(vec![Request::new(0, ClientId(0), 0.0, 4, 3)]);
        let l = ServiceLedger::new(&log, &CostModel::default());
        assert_eq!(l.total_service(ClientId(0)), 10.0);
        assert_eq!(l.service_until(ClientId(0), 0.0), 4.0);
        assert_eq!(l.service_in_window(ClientId(0), 0.0, 1.0), 2.0);
        assert_eq!(l.service_in_window(ClientId(0), 1.0, 1.0), 0.0);
        assert_eq!(l.service_until(ClientId(7), 5.0), 0.0);
        assert_eq!(l.tokens_processed(), 7);
        assert_eq!(l.requested_in_window(ClientId(0), -1.0, 0.0), 10.0);
    }

    #[test]
    fn backlog_ranges() {
        // Pool 32 with conservative reservation 16 per request: two run at
        // once, the third waits.
        let reqs = (0..3).map(|i| Request::new(i, ClientId(0), 0.0, 8, 2)).collect();
        let log = tiny_run(reqs);
        let l = ServiceLedger::new(&log, &CostModel::default());
        let iv = l.backlog_intervals(ClientId(0));
        assert_eq!(iv.len(), 1);
        let (s, e) = iv[0];
        assert_eq!(s, 0);
        assert!(matches!(log.events[e].kind, EventKind::Dispatch { request_id: 2, .. }));
        assert!(l.is_backlogged_after(ClientId(0), e - 1));
        assert!(!l.is_backlogged_after(ClientId(0), e));
    }

    #[test]
    fn weights_normalize() {
        let log = tiny_run(vec![Request::new(0, ClientId(0), 0.0, 4, 3)]);
        let l = ServiceLedger::with_weights(&log, &CostModel::default(), &[2.0]);
        assert_eq!(l.total_service(ClientId(0)), 5.0);
    }
}
