//! Baselines without per-client accounting: first-come-first-serve and a
//! per-client requests-per-minute cap in front of it.

use super::{ArrivalDecision, Scheduler};
use crate::engine::BatchBuilder;
use crate::types::Request;
use std::collections::VecDeque;

pub const RPM_WINDOW_SECONDS: f64 = 60.0;

fn drain_fifo(fifo: &mut VecDeque<usize>, requests: &[Request], batch: &mut BatchBuilder<'_>) {
    while let Some(&key) = fifo.front() {
        if !batch.try_admit(key, &requests[key]) {
            break;
        }
        fifo.pop_front();
    }
}

#[derive(Debug, Clone, Default)]
pub struct Fcfs {
    fifo: VecDeque<usize>,
}

impl Fcfs {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Scheduler for Fcfs {
    fn name(&self) -> String {
        "fcfs".into()
    }

    fn on_arrival(&mut self, key: usize, _request: &Request, _now: f64) -> ArrivalDecision {
        self.fifo.push_back(key);
        ArrivalDecision::Enqueued
    }

    fn select_new_requests(&mut self, requests: &[Request], batch: &mut BatchBuilder<'_>) {
        drain_fifo(&mut self.fifo, requests, batch);
    }

    fn on_tokens_decoded(&mut self, _requests: &[Request], _decoded: &[usize]) {}

    fn on_request_finished(&mut self, _request: &Request) {}

    fn queued_len(&self) -> usize {
        self.fifo.len()
    }

    fn peek_next(&self, _requests: &[Request]) -> Option<usize> {
        self.fifo.front().copied()
    }
}

/// FCFS behind a per-client cap on accepted requests per aligned 60 s window.
///
/// Excess requests are rejected, or with `defer` held back and accepted at
/// the next window boundary (still subject to that window's cap).
#[derive(Debug, Clone)]
pub struct Rpm {
    limit: u32,
    defer: bool,
    fifo: VecDeque<usize>,
    window: u64,
    accepted: Vec<u32>,
    /// Deferred requests as `(key, client index)`, in arrival order.
    deferred: VecDeque<(usize, usize)>,
}

impl Rpm {
    pub fn new(limit: u32) -> Self {
        Self {
            limit,
            defer: false,
            fifo: VecDeque::new(),
            window: 0,
            accepted: Vec::new(),
            deferred: VecDeque::new(),
        }
    }

    pub fn deferring(limit: u32) -> Self {
        Self {
            defer: true,
            ..Self::new(limit)
        }
    }

    pub fn limit(&self) -> u32 {
        self.limit
    }

    fn window_of(t: f64) -> u64 {
        (t / RPM_WINDOW_SECONDS).floor() as u64
    }

    fn try_accept(&mut self, client: usize) -> bool {
        if self.accepted.len() <= client {
            self.accepted.resize(client + 1, 0);
        }
        if self.accepted[client] < self.limit {
            self.accepted[client] += 1;
            true
        } else {
            false
        }
    }

    fn roll_to(&mut self, now: f64) {
        let w = Self::window_of(now);
        if w <= self.window {
            return;
        }
        self.window = w;
        self.accepted.iter_mut().for_each(|c| *c = 0);
        let held = std::mem::take(&mut self.deferred);
        for (key, client) in held {
            if self.try_accept(client) {
                self.fifo.push_back(key);
            } else {
                self.deferred.push_back((key, client));
            }
        }
    }
}

impl Scheduler for Rpm {
    fn name(&self) -> String {
        if self.defer {
            format!("rpm_defer({})", self.limit)
        } else {
            format!("rpm({})", self.limit)
        }
    }

    fn on_arrival(&mut self, key: usize, request: &Request, now: f64) -> ArrivalDecision {
        self.roll_to(now);
        let client = request.client.index();
        if self.try_accept(client) {
            self.fifo.push_back(key);
            ArrivalDecision::Enqueued
        } else if self.defer {
            self.deferred.push_back((key, client));
            ArrivalDecision::Deferred
        } else {
            ArrivalDecision::Rejected
        }
    }

    fn select_new_requests(&mut self, requests: &[Request], batch: &mut BatchBuilder<'_>) {
        drain_fifo(&mut self.fifo, requests, batch);
    }

    fn on_tokens_decoded(&mut self, _requests: &[Request], _decoded: &[usize]) {}

    fn on_request_finished(&mut self, _request: &Request) {}

    fn queued_len(&self) -> usize {
        self.fifo.len()
    }

    fn peek_next(&self, _requests: &[Request]) -> Option<usize> {
        self.fifo.front().copied()
    }

    fn next_wakeup(&self) -> Option<f64> {
        (!self.deferred.is_empty()).then(|| (self.window + 1) as f64 * RPM_WINDOW_SECONDS)
    }

    fn on_wakeup(&mut self, now: f64) {
        self.roll_to(now);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ClientId;

    fn req(id: u64, client: u32, t: f64) -> Request {
        Request::new(id, ClientId(client), t, 1, 1)
    }

    #[test]
    fn sixth_request_in_a_minute_is_rejected() {
        let mut s = Rpm::new(5);
        for i in 0..5 {
            let r = req(i, 0, i as f64);
            assert_eq!(s.on_arrival(i as usize, &r, r.arrival_time), ArrivalDecision::Enqueued);
        }
        assert_eq!(s.on_arrival(5, &req(5, 0, 30.0), 30.0), ArrivalDecision::Rejected);
        // Other clients have their own budget, and the window resets at 60 s.
        assert_eq!(s.on_arrival(6, &req(6, 1, 30.0), 30.0), ArrivalDecision::Enqueued);
        assert_eq!(s.on_arrival(7, &req(7, 0, 60.0), 60.0), ArrivalDecision::Enqueued);
    }

    #[test]
    fn deferred_requests_join_at_the_boundary() {
        let mut s = Rpm::deferring(1);
        assert_eq!(s.on_arrival(0, &req(0, 0, 1.0), 1.0), ArrivalDecision::Enqueued);
        assert_eq!(s.on_arrival(1, &req(1, 0, 2.0), 2.0), ArrivalDecision::Deferred);
        assert_eq!(s.on_arrival(2, &req(2, 0, 3.0), 3.0), ArrivalDecision::Deferred);
        assert_eq!(s.next_wakeup(), Some(60.0));
        s.on_wakeup(60.0);
        assert_eq!(s.queued_len(), 2);
        assert_eq!(s.next_wakeup(), Some(120.0));
        s.on_wakeup(120.0);
        assert_eq!(s.queued_len(), 3);
        assert_eq!(s.next_wakeup(), None);
    }

    #[test]
    fn fcfs_peeks_oldest() {
        let mut s = Fcfs::new();
        s.on_arrival(3, &req(3, 1, 0.0), 0.0);
        s.on_arrival(4, &req(4, 0, 0.1), 0.1);
        assert_eq!(s.peek_next(&[]), Some(3));
        assert_eq!(s.queued_len(), 2);
    }
}
