//! Request schedulers plugged into the engine's admission step.

mod fcfs;
mod predictor;
mod priority;
mod spec;
mod vtc;

pub use fcfs::{Fcfs, Rpm, RPM_WINDOW_SECONDS};
pub use predictor::{Predictor, PredictorKind};
pub use priority::StrictPriority;
pub use spec::{parse_cost_model, PredictorSpec, SchedulerSpec, SpecError};
pub use vtc::{Vtc, VtcOptions};

use crate::engine::BatchBuilder;
use crate::types::{ClientId, Request};

/// What happened to a request handed to [`Scheduler::on_arrival`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrivalDecision {
    Enqueued,
    /// Held back by the scheduler; it will enqueue it at a later wakeup.
    Deferred,
    Rejected,
}

/// Virtual counters exposed for monitoring.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterView {
    /// Indexed by client id.
    pub counters: Vec<f64>,
    /// Clients with at least one queued request, ascending.
    pub queued: Vec<ClientId>,
}

/// A scheduling policy.
///
/// Requests are identified by `key`, their index in the engine's request
/// slice. Calls arrive in simulation order from a single engine.
pub trait Scheduler: Send {
    fn name(&self) -> String;

    fn on_arrival(&mut self, key: usize, request: &Request, now: f64) -> ArrivalDecision;

    /// Fills the next minibatch through `batch`, stopping at the first
    /// request that does not fit.
    fn select_new_requests(&mut self, requests: &[Request], batch: &mut BatchBuilder<'_>);

    /// Called once per decode step with the requests that produced a token.
    fn on_tokens_decoded(&mut self, requests: &[Request], decoded: &[usize]);

    fn on_request_finished(&mut self, request: &Request);

    /// Requests waiting for admission (deferred requests excluded).
    fn queued_len(&self) -> usize;

    /// The request the next admission attempt would try first.
    fn peek_next(&self, requests: &[Request]) -> Option<usize>;

    fn counters(&self) -> Option<CounterView> {
        None
    }

    /// Earliest time the scheduler wants to be woken without an arrival.
    fn next_wakeup(&self) -> Option<f64> {
        None
    }

    fn on_wakeup(&mut self, _now: f64) {}
}

impl<S: Scheduler + ?Sized> Scheduler for Box<S> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn on_arrival(&mut self, key: usize, request: &Request, now: f64) -> ArrivalDecision {
        (**self).on_arrival(key, request, now)
    }
    fn select_new_requests(&mut self, requests: &[Request], batch: &mut BatchBuilder<'_>) {
        (**self).select_new_requests(requests, batch)
    }
    fn on_tokens_decoded(&mut self, requests: &[Request], decoded: &[usize]) {
        (**self).on_tokens_decoded(requests, decoded)
    }
    fn on_request_finished(&mut self, request: &Request) {
        (**self).on_request_finished(request)
    }
    fn queued_len(&self) -> usize {
        (**self).queued_len()
    }
    fn peek_next(&self, requests: &[Request]) -> Option<usize> {
        (**self).peek_next(requests)
    }
    fn counters(&self) -> Option<CounterView> {
        (**self).counters()
    }
    fn next_wakeup(&self) -> Option<f64> {
        (**self).next_wakeup()
    }
    fn on_wakeup(&mut self, now: f64) {
        (**self).on_wakeup(now)
    }
}
