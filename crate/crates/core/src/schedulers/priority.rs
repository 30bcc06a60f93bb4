use super::{ArrivalDecision, Scheduler};
use crate::engine::BatchBuilder;
use crate::types::Request;
use std::collections::VecDeque;

/// Always serves the lowest-numbered queued client first.
///
/// Work-conserving but deliberately unfair: with two backlogged clients the
/// higher-numbered one starves. Useful as a negative control for the
/// fairness monitors.
#[derive(Debug, Clone, Default)]
pub struct StrictPriority {
    queues: Vec<VecDeque<usize>>,
    queued: usize,
}

impl StrictPriority {
    pub fn new() -> Self {
        Self::default()
    }

    fn head(&self) -> Option<(usize, usize)> {
        self.queues
            .iter()
            .enumerate()
            .find_map(|(c, q)| q.front().map(|&k| (c, k)))
    }
}

impl Scheduler for StrictPriority {
    fn name(&self) -> String {
        "priority".into()
    }

    fn on_arrival(&mut self, key: usize, request: &Request, _now: f64) -> ArrivalDecision {
        let c = request.client.index();
        if self.queues.len() <= c {
            self.queues.resize_with(c + 1, VecDeque::new);
        }
        self.queues[c].push_back(key);
        self.queued += 1;
        ArrivalDecision::Enqueued
    }

    fn select_new_requests(&mut self, requests: &[Request], batch: &mut BatchBuilder<'_>) {
        while let Some((c, key)) = self.head() {
            if !batch.try_admit(key, &requests[key]) {
                break;
            }
            self.queues[c].pop_front();
            self.queued -= 1;
        }
    }

    fn on_tokens_decoded(&mut self, _requests: &[Request], _decoded: &[usize]) {}

    fn on_request_finished(&mut self, _request: &Request) {}

    fn queued_len(&self) -> usize {
        self.queued
    }

    fn peek_next(&self, _requests: &[Request]) -> Option<usize> {
        self.head().map(|(_, k)| k)
    }
}
