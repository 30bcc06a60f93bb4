//! Virtual Token Counter scheduling and its variants.
//!
//! Every client owns a counter of the service it has received. Admission
//! always picks the earliest queued request of the queued client with the
//! smallest counter. A client that (re)joins the queue has its counter lifted
//! to the smallest counter among queued clients, or to the counter of the
//! client that left the queue last when the queue is empty, so idle time
//! does not bank credit.
//!
//! The same type covers:
//! - general cost functions: counters advance by `h` increments,
//! - least-counter-first (`lift = false`),
//! - weighted fairness: increments are divided by the client weight,
//! - length prediction: the predicted output cost is charged up front and
//!   corrected as tokens are produced and when the request finishes.

use super::predictor::Predictor;
use super::{ArrivalDecision, CounterView, Scheduler};
use crate::cost::CostModel;
use crate::engine::BatchBuilder;
use crate::types::{ClientId, Request};
use std::collections::{HashMap, VecDeque};

#[derive(Debug, Clone, Default)]
pub struct VtcOptions {
    /// Apply the counter lift on (re)joining the queue.
    pub lift: bool,
    /// Per-client weights; missing entries default to 1.
    pub weights: Vec<f64>,
    pub predictor: Option<Predictor>,
}

#[derive(Debug, Clone, Copy)]
struct Queued {
    key: usize,
    arrival_time: f64,
}

#[derive(Debug, Clone)]
pub struct Vtc {
    name: String,
    cost: CostModel,
    lift: bool,
    weights: Vec<f64>,
    predictor: Option<Predictor>,
    counters: Vec<f64>,
    queues: Vec<VecDeque<Queued>>,
    queued_total: usize,
    last_left: Option<ClientId>,
    /// Predicted output length by request id.
    predictions: HashMap<u64, u32>,
}

impl Vtc {
    pub fn new(name: impl Into<String>, cost: CostModel, options: VtcOptions) -> Self {
        Self {
            name: name.into(),
            cost,
            lift: options.lift,
            weights: options.weights,
            predictor: options.predictor,
            counters: Vec::new(),
            queues: Vec::new(),
            queued_total: 0,
            last_left: None,
            predictions: HashMap::new(),
        }
    }

    /// Plain VTC with the given cost model.
    pub fn standard(cost: CostModel) -> Self {
        Self::new(
            "vtc",
            cost,
            VtcOptions {
                lift: true,
                ..Default::default()
            },
        )
    }

    /// Least counter first: VTC without the counter lift.
    pub fn least_counter_first(cost: CostModel) -> Self {
        Self::new("lcf", cost, VtcOptions::default())
    }

    pub fn weighted(cost: CostModel, weights: Vec<f64>) -> Self {
        Self::new(
            "vtc_weighted",
            cost,
            VtcOptions {
                lift: true,
                weights,
                predictor: None,
            },
        )
    }

    pub fn with_prediction(cost: CostModel, predictor: Predictor) -> Self {
        let name = format!("vtc_predict({})", predictor.kind());
        Self::new(
            name,
            cost,
            VtcOptions {
                lift: true,
                weights: Vec::new(),
                predictor: Some(predictor),
            },
        )
    }

    pub fn counter(&self, client: ClientId) -> f64 {
        self.counters.get(client.index()).copied().unwrap_or(0.0)
    }

    pub fn weight(&self, client: ClientId) -> f64 {
        self.weights.get(client.index()).copied().unwrap_or(1.0)
    }

    pub fn last_left(&self) -> Option<ClientId> {
        self.last_left
    }

    pub fn is_queued(&self, client: ClientId) -> bool {
        self.queues.get(client.index()).is_some_and(|q| !q.is_empty())
    }

    /// Sets a counter directly. Used to set up scenarios in tests.
    pub fn set_counter(&mut self, client: ClientId, value: f64) {
        self.ensure_client(client);
        self.counters[client.index()] = value;
    }

    /// Records `client` as the last client to leave the queue.
    pub fn set_last_left(&mut self, client: Option<ClientId>) {
        self.last_left = client;
    }

    fn ensure_client(&mut self, client: ClientId) {
        let n = client.index() + 1;
        if self.counters.len() < n {
            self.counters.resize(n, 0.0);
            self.queues.resize_with(n, VecDeque::new);
        }
    }

    fn charge(&mut self, client: ClientId, service: f64) {
        let w = self.weight(client);
        self.counters[client.index()] += service / w;
    }

    fn min_queued_counter(&self) -> Option<f64> {
        self.queues
            .iter()
            .zip(&self.counters)
            .filter(|(q, _)| !q.is_empty())
            .map(|(_, &c)| c)
            .reduce(f64::min)
    }

    /// Queued client with the smallest `(counter, head arrival, id)`.
    fn argmin_client(&self) -> Option<usize> {
        let mut best: Option<(usize, f64, f64)> = None;
        for (i, q) in self.queues.iter().enumerate() {
            let Some(head) = q.front() else { continue };
            let c = self.counters[i];
            let better = match best {
                None => true,
                Some((_, bc, ba)) => c < bc || (c == bc && head.arrival_time < ba),
            };
            if better {
                best = Some((i, c, head.arrival_time));
            }
        }
        best.map(|(i, _, _)| i)
    }
}

impl Scheduler for Vtc {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn on_arrival(&mut self, key: usize, request: &Request, _now: f64) -> ArrivalDecision {
        let u = request.client;
        self.ensure_client(u);
        if self.lift && self.queues[u.index()].is_empty() {
            let floor = if self.queued_total == 0 {
                self.last_left.map(|l| self.counter(l))
            } else {
                self.min_queued_counter()
            };
            if let Some(floor) = floor {
                let c = &mut self.counters[u.index()];
                *c = c.max(floor);
            }
        }
        self.queues[u.index()].push_back(Queued {
            key,
            arrival_time: request.arrival_time,
        });
        self.queued_total += 1;
        ArrivalDecision::Enqueued
    }

    fn select_new_requests(&mut self, requests: &[Request], batch: &mut BatchBuilder<'_>) {
        while let Some(k) = self.argmin_client() {
            let head = *self.queues[k].front().expect("argmin picks a queued client");
            let r = &requests[head.key];
            if !batch.try_admit(head.key, r) {
                break;
            }
            self.queues[k].pop_front();
            self.queued_total -= 1;
            let mut service = self.cost.admission_cost(r.input_len);
            if let Some(p) = self.predictor.as_mut() {
                let predicted = p.predict(r);
                self.predictions.insert(r.request_id, predicted);
                service += self.cost.output_span_cost(r.input_len, 0, predicted);
            }
            self.charge(r.client, service);
            if self.queues[k].is_empty() {
                self.last_left = Some(ClientId(k as u32));
            }
        }
    }

    fn on_tokens_decoded(&mut self, requests: &[Request], decoded: &[usize]) {
        for &key in decoded {
            let r = &requests[key];
            let precharged = self.predictions.get(&r.request_id).copied();
            if precharged.is_some_and(|p| r.generated <= p) {
                continue;
            }
            let service = self.cost.marginal_unchecked(r.input_len, r.generated);
            self.charge(r.client, service);
        }
    }

    fn on_request_finished(&mut self, request: &Request) {
        let Some(predicted) = self.predictions.remove(&request.request_id) else {
            return;
        };
        let actual = request.generated;
        if actual < predicted {
            let refund = self.cost.output_span_cost(request.input_len, actual, predicted);
            self.charge(request.client, -refund);
        }
        if let Some(p) = self.predictor.as_mut() {
            p.observe(request.client, actual);
        }
    }

    fn queued_len(&self) -> usize {
        self.queued_total
    }

    fn peek_next(&self, _requests: &[Request]) -> Option<usize> {
        self.argmin_client()
            .and_then(|k| self.queues[k].front())
            .map(|q| q.key)
    }

    fn counters(&self) -> Option<CounterView> {
        let queued = self
            .queues
            .iter()
            .enumerate()
            .filter(|(_, q)| !q.is_empty())
            .map(|(i, _)| ClientId(i as u32))
            .collect();
        Some(CounterView {
            counters: self.counters.clone(),
            queued,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{MemoryPool, ReservationPolicy};
    use crate::schedulers::PredictorKind;
    use crate::types::SystemLimits;

    fn req(id: u64, client: u32, t: f64, input: u32, output: u32) -> Request {
        Request::new(id, ClientId(client), t, input, output)
    }

    fn limits() -> SystemLimits {
        SystemLimits::new(1024, 1024, 10_000).unwrap()
    }

    fn select(s: &mut Vtc, requests: &[Request], pool: &mut MemoryPool) -> Vec<usize> {
        let mut b = BatchBuilder::new(pool, ReservationPolicy::OracleExact, limits());
        s.select_new_requests(requests, &mut b);
        b.admitted().to_vec()
    }

    #[test]
    fn lift_from_last_left_when_queue_empty() {
        let mut s = Vtc::standard(CostModel::default());
        s.set_counter(ClientId(0), 100.0);
        s.set_counter(ClientId(1), 40.0);
        s.set_last_left(Some(ClientId(0)));
        s.on_arrival(0, &req(0, 1, 0.0, 1, 1), 0.0);
        assert_eq!(s.counter(ClientId(1)), 100.0);
    }

    #[test]
    fn no_lift_with_queued_request() {
        let mut s = Vtc::standard(CostModel::default());
        s.on_arrival(0, &req(0, 1, 0.0, 1, 1), 0.0);
        s.set_counter(ClientId(1), 40.0);
        s.set_counter(ClientId(0), 100.0);
        s.set_last_left(Some(ClientId(0)));
        s.on_arrival(1, &req(1, 1, 0.1, 1, 1), 0.1);
        assert_eq!(s.counter(ClientId(1)), 40.0);
    }

    #[test]
    fn lift_to_min_of_queued() {
        let mut s = Vtc::standard(CostModel::default());
        s.set_counter(ClientId(0), 70.0);
        s.set_counter(ClientId(1), 90.0);
        s.on_arrival(0, &req(0, 0, 0.0, 1, 1), 0.0);
        s.on_arrival(1, &req(1, 1, 0.0, 1, 1), 0.0);
        s.on_arrival(2, &req(2, 2, 0.0, 1, 1), 0.0);
        assert_eq!(s.counter(ClientId(2)), 70.0);
    }

    #[test]
    fn lcf_does_not_lift() {
        let mut s = Vtc::least_counter_first(CostModel::default());
        s.set_counter(ClientId(0), 100.0);
        s.set_counter(ClientId(1), 40.0);
        s.set_last_left(Some(ClientId(0)));
        s.on_arrival(0, &req(0, 1, 0.0, 1, 1), 0.0);
        assert_eq!(s.counter(ClientId(1)), 40.0);
    }

    #[test]
    fn tie_breaks_on_head_arrival_then_id() {
        let requests = vec![req(0, 1, 0.0, 8, 8), req(1, 0, 0.5, 8, 8)];
        let mut s = Vtc::standard(CostModel::default());
        s.on_arrival(0, &requests[0], 0.0);
        s.on_arrival(1, &requests[1], 0.5);
        assert_eq!(s.peek_next(&requests), Some(0));

        let same_time = vec![req(0, 1, 0.0, 8, 8), req(1, 0, 0.0, 8, 8)];
        let mut s = Vtc::standard(CostModel::default());
        s.on_arrival(0, &same_time[0], 0.0);
        s.on_arrival(1, &same_time[1], 0.0);
        assert_eq!(s.peek_next(&same_time), Some(1));
    }

    #[test]
    fn argmin_charges_input() {
        let requests = vec![req(0, 0, 0.0, 16, 8), req(1, 1, 0.0, 32, 8)];
        let mut s = Vtc::standard(CostModel::default());
        for (k, r) in requests.iter().enumerate() {
            s.on_arrival(k, r, 0.0);
        }
        s.set_counter(ClientId(0), 10.0);
        s.set_counter(ClientId(1), 4.0);
        let mut pool = MemoryPool::new(10_000);
        assert_eq!(select(&mut s, &requests, &mut pool), vec![1, 0]);
        assert_eq!(s.counter(ClientId(1)), 36.0);
        assert_eq!(s.counter(ClientId(0)), 26.0);
        assert_eq!(s.last_left(), Some(ClientId(0)));
    }

    #[test]
    fn non_fitting_head_ends_round() {
        let requests = vec![req(0, 0, 0.0, 1000, 1000)];
        let mut s = Vtc::standard(CostModel::default());
        s.on_arrival(0, &requests[0], 0.0);
        let mut pool = MemoryPool::new(10_000);
        pool.reserve(9_000);
        assert!(select(&mut s, &requests, &mut pool).is_empty());
        assert_eq!(s.queued_len(), 1);
        assert_eq!(s.counter(ClientId(0)), 0.0);
    }

    #[test]
    fn decode_charges_per_token_and_weight() {
        let mut requests: Vec<Request> = (0..3).map(|i| req(i, 0, 0.0, 1, 10)).collect();
        for r in &mut requests {
            r.generated = 1;
        }
        let mut s = Vtc::standard(CostModel::default());
        s.set_counter(ClientId(0), 0.0);
        s.on_tokens_decoded(&requests, &[0, 1, 2]);
        assert_eq!(s.counter(ClientId(0)), 6.0);

        let mut w = Vtc::weighted(CostModel::default(), vec![4.0]);
        w.set_counter(ClientId(0), 0.0);
        w.on_tokens_decoded(&requests, &[0, 1, 2]);
        assert_eq!(w.counter(ClientId(0)), 1.5);
    }

    #[test]
    fn prediction_precharge_and_refund() {
        let limits = limits();
        let mut requests = vec![req(0, 0, 0.0, 10, 200)];
        let mut s = Vtc::with_prediction(
            CostModel::default(),
            Predictor::new(PredictorKind::Oracle, limits.max_output, 0),
        );
        s.on_arrival(0, &requests[0], 0.0);
        let mut pool = MemoryPool::new(10_000);
        select(&mut s, &requests, &mut pool);
        assert_eq!(s.counter(ClientId(0)), 10.0 + 400.0);
        requests[0].generated = 50;
        s.on_tokens_decoded(&requests, &[0]);
        assert_eq!(s.counter(ClientId(0)), 410.0);
        requests[0].generated = 200;
        s.on_request_finished(&requests[0]);
        assert_eq!(s.counter(ClientId(0)), 410.0);
    }

    #[test]
    fn overestimate_is_refunded_at_finish() {
        // Predict 300, produce 200: 100 tokens at w_q = 2 come back.
        let mut requests = [req(7, 0, 0.0, 1, 200)];
        let mut s = Vtc::standard(CostModel::default());
        s.predictor = Some(Predictor::new(PredictorKind::Oracle, 1024, 0));
        s.predictions.insert(7, 300);
        s.set_counter(ClientId(0), 1000.0);
        requests[0].generated = 200;
        s.on_request_finished(&requests[0]);
        assert_eq!(s.counter(ClientId(0)), 800.0);
    }

    #[test]
    fn underestimate_charges_extra_tokens() {
        let mut requests = vec![req(7, 0, 0.0, 1, 200)];
        let mut s = Vtc::standard(CostModel::default());
        s.predictions.insert(7, 100);
        s.set_counter(ClientId(0), 0.0);
        requests[0].generated = 100;
        s.on_tokens_decoded(&requests, &[0]);
        assert_eq!(s.counter(ClientId(0)), 0.0);
        requests[0].generated = 101;
        s.on_tokens_decoded(&requests, &[0]);
        assert_eq!(s.counter(ClientId(0)), 2.0);
    }
}
