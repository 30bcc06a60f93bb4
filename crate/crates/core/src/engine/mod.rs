//! Discrete-event simulation of a continuous-batching serving engine.
//!
//! Each [`Engine::step`] is one iteration of the execution loop:
//!
//! 1. deliver arrivals that are due to the scheduler,
//! 2. if admission is allowed, let the scheduler fill a new minibatch under
//!    the memory fit predicate and prefill it,
//! 3. decode one token for every running request,
//! 4. retire finished requests and release their memory,
//! 5. record the scheduler's counters.
//!
//! Arrivals that fall inside a step are delivered at their own timestamps
//! before the step's tokens are accounted, which is how a concurrent
//! monitoring stream would observe them.

mod log;
mod pool;

pub use log::{Event, EventKind, EventLog, LogHeader, RejectReason, LOG_FORMAT, LOG_VERSION};
pub use pool::{BatchBuilder, MemoryPool, ReservationPolicy};

use crate::schedulers::{ArrivalDecision, Scheduler};
use crate::types::{LimitsError, Request, RequestState, SystemLimits};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid engine configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Limits(#[from] LimitsError),
    #[error("arrivals out of order: request {request_id} at {time} follows {previous}")]
    ArrivalOrder {
        request_id: u64,
        time: f64,
        previous: f64,
    },
    #[error("scheduler {scheduler} broke the engine contract at t={time}: {detail}")]
    ContractViolation {
        scheduler: String,
        time: f64,
        detail: String,
    },
}

/// Wall-clock model of the simulated accelerator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingModel {
    pub prefill_seconds_per_token: f64,
    pub decode_step_base_seconds: f64,
    /// Added per token held by the running batch (prompt plus generated).
    pub decode_step_seconds_per_batch_token: f64,
}

impl Default for TimingModel {
    /// Calibrated so that 256/256 requests under the default limits are
    /// served at roughly 95 requests per minute.
    fn default() -> Self {
        Self {
            prefill_seconds_per_token: 1.0e-4,
            decode_step_base_seconds: 0.013,
            decode_step_seconds_per_batch_token: 1.2e-6,
        }
    }
}

impl TimingModel {
    fn validate(&self) -> Result<(), EngineError> {
        let all = [
            self.prefill_seconds_per_token,
            self.decode_step_base_seconds,
            self.decode_step_seconds_per_batch_token,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(EngineError::Config("timing coefficients must be finite and >= 0".into()));
        }
        if self.decode_step_base_seconds <= 0.0 && self.decode_step_seconds_per_batch_token <= 0.0 {
            return Err(EngineError::Config("a decode step must take positive time".into()));
        }
        Ok(())
    }

    pub fn prefill_time(&self, tokens: u64) -> f64 {
        self.prefill_seconds_per_token * tokens as f64
    }

    pub fn decode_time(&self, batch_tokens: u64) -> f64 {
        self.decode_step_base_seconds + self.decode_step_seconds_per_batch_token * batch_tokens as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub limits: SystemLimits,
    pub timing: TimingModel,
    /// New minibatches are admitted every k decode steps (and whenever the
    /// running batch is empty).
    pub admit_every_k_steps: u32,
    pub reservation_policy: ReservationPolicy,
    pub rng_seed: u64,
    /// Stop the simulation at this simulated time instead of draining.
    pub horizon: Option<f64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            limits: SystemLimits::default(),
            timing: TimingModel::default(),
            admit_every_k_steps: 1,
            reservation_policy: ReservationPolicy::Conservative,
            rng_seed: 0,
            horizon: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let l = &self.limits;
        if l.max_input == 0 || l.max_output == 0 || l.pool_tokens == 0 {
            return Err(LimitsError::NonPositive {
                max_input: l.max_input,
                max_output: l.max_output,
                pool_tokens: l.pool_tokens,
            }
            .into());
        }
        if self.admit_every_k_steps == 0 {
            return Err(EngineError::Config("admit_every_k_steps must be >= 1".into()));
        }
        if let Some(h) = self.horizon {
            if !(h.is_finite() && h >= 0.0) {
                return Err(EngineError::Config(format!("bad horizon {h}")));
            }
        }
        self.timing.validate()
    }
}

/// Counts collected while the engine runs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub steps: u64,
    pub admission_rounds: u64,
    /// Rounds that stopped because the next candidate did not fit.
    pub rounds_blocked_on_memory: u64,
    /// Rounds that stopped because the queue ran empty.
    pub rounds_drained_queue: u64,
    pub peak_reserved: u64,
    pub rejected: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: EventLog,
    pub requests: Vec<Request>,
    pub stats: RunStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Continue,
    Done,
}

/// A simulation in progress. Owns its requests and borrows the scheduler.
pub struct Engine<'s> {
    config: EngineConfig,
    scheduler: &'s mut dyn Scheduler,
    requests: Vec<Request>,
    reservations: Vec<u64>,
    next_arrival: usize,
    running: Vec<usize>,
    pool: MemoryPool,
    clock: f64,
    step_index: u64,
    next_batch_id: u64,
    log: EventLog,
    stats: RunStats,
    done: bool,
}

impl<'s> Engine<'s> {
    pub fn new(
        config: EngineConfig,
        scheduler: &'s mut dyn Scheduler,
        arrivals: Vec<Request>,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        let mut previous = f64::NEG_INFINITY;
        for r in &arrivals {
            if !(r.arrival_time.is_finite() && r.arrival_time >= 0.0) || r.arrival_time < previous {
                return Err(EngineError::ArrivalOrder {
                    request_id: r.request_id,
                    time: r.arrival_time,
                    previous,
                });
            }
            previous = r.arrival_time;
            r.check_limits(&config.limits)?;
        }
        let header = LogHeader {
            format: LOG_FORMAT.into(),
            version: LOG_VERSION,
            scheduler: scheduler.name(),
            limits: config.limits,
            reservation: config.reservation_policy,
            admit_every_k_steps: config.admit_every_k_steps,
        };
        let requests: Vec<Request> = arrivals
            .into_iter()
            .map(|mut r| {
                r.generated = 0;
                r.state = RequestState::Queued;
                r.dispatch_time = None;
                r.first_token_time = None;
                r.finish_time = None;
                r
            })
            .collect();
        Ok(Self {
            pool: MemoryPool::new(config.limits.pool_tokens),
            reservations: vec![0; requests.len()],
            config,
            scheduler,
            requests,
            next_arrival: 0,
            running: Vec::new(),
            clock: 0.0,
            step_index: 0,
            next_batch_id: 0,
            log: EventLog::new(header),
            stats: RunStats::default(),
            done: false,
        })
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn requests(&self) -> &[Request] {
        &self.requests
    }

    pub fn pool(&self) -> &MemoryPool {
        &self.pool
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    fn past_horizon(&self, t: f64) -> bool {
        self.config.horizon.is_some_and(|h| t >= h)
    }

    /// Hands every arrival strictly before `until` (or at it, when
    /// `inclusive`) to the scheduler at its own timestamp.
    fn deliver_arrivals(&mut self, until: f64, inclusive: bool) {
        while let Some(r) = self.requests.get(self.next_arrival) {
            let t = r.arrival_time;
            let due = if inclusive { t <= until } else { t < until };
            if !due || self.past_horizon(t) {
                break;
            }
            let key = self.next_arrival;
            self.next_arrival += 1;
            let at = t.max(self.log.last_time());
            let r = &self.requests[key];
            self.log.push(
                at,
                EventKind::Arrival {
                    request_id: r.request_id,
                    client: r.client,
                    arrival_time: r.arrival_time,
                    input_len: r.input_len,
                    output_len: r.true_output_len,
                },
            );
            let need = self.config.reservation_policy.tokens(r, &self.config.limits);
            let decision = if need > self.pool.capacity {
                Some(RejectReason::TooLarge)
            } else {
                match self.scheduler.on_arrival(key, r, at) {
                    ArrivalDecision::Enqueued | ArrivalDecision::Deferred => None,
                    ArrivalDecision::Rejected => Some(RejectReason::RateLimited),
                }
            };
            if let Some(reason) = decision {
                let r = &mut self.requests[key];
                r.state = RequestState::Rejected;
                self.stats.rejected += 1;
                self.log.push(
                    at,
                    EventKind::Rejected {
                        request_id: r.request_id,
                        client: r.client,
                        reason,
                    },
                );
            }
        }
    }

    /// Moves the clock to `t`, delivering the arrivals that happen before it.
    fn advance_to(&mut self, t: f64) {
        self.deliver_arrivals(t, false);
        self.clock = t;
    }

    fn pending_arrival_time(&self) -> Option<f64> {
        self.requests
            .get(self.next_arrival)
            .map(|r| r.arrival_time)
            .filter(|&t| !self.past_horizon(t))
    }

    fn violation(&self, detail: String) -> EngineError {
        EngineError::ContractViolation {
            scheduler: self.scheduler.name(),
            time: self.clock,
            detail,
        }
    }

    fn admit(&mut self) -> Result<(), EngineError> {
        let policy = self.config.reservation_policy;
        let limits = self.config.limits;
        let mut builder = BatchBuilder::new(&mut self.pool, policy, limits);
        self.scheduler.select_new_requests(&self.requests, &mut builder);
        let (admitted, blocked_on, calls_after_break) = builder.finish();
        self.stats.admission_rounds += 1;
        if calls_after_break > 0 {
            return Err(self.violation(format!(
                "kept selecting {calls_after_break} request(s) after a failed fit check"
            )));
        }
        // Work conservation: a round may only end early on a request that
        // does not fit.
        if self.scheduler.queued_len() > 0 {
            let next = self.scheduler.peek_next(&self.requests);
            match (blocked_on, next) {
                (Some(b), Some(n)) if b == n => {}
                (_, Some(n)) if !self.pool.fits(&self.requests[n], policy, &limits) => {}
                (_, next) => {
                    return Err(self.violation(format!(
                        "admission stopped with a fitting candidate queued ({next:?})"
                    )))
                }
            }
            self.stats.rounds_blocked_on_memory += 1;
        } else {
            self.stats.rounds_drained_queue += 1;
        }
        if admitted.is_empty() {
            return Ok(());
        }
        let batch_id = self.next_batch_id;
        self.next_batch_id += 1;
        let mut prefill_tokens = 0u64;
        for &key in &admitted {
            if self.requests[key].state != RequestState::Queued {
                let id = self.requests[key].request_id;
                return Err(self.violation(format!("request {id} admitted twice")));
            }
            let r = &mut self.requests[key];
            r.state = RequestState::Running;
            r.dispatch_time = Some(self.clock);
            prefill_tokens += u64::from(r.input_len);
            self.reservations[key] = policy.tokens(r, &limits);
            let (request_id, client) = (r.request_id, r.client);
            self.log.push(
                self.clock,
                EventKind::Dispatch {
                    request_id,
                    client,
                    batch_id,
                },
            );
        }
        self.stats.peak_reserved = self.stats.peak_reserved.max(self.pool.reserved);
        self.running.extend_from_slice(&admitted);
        let end = self.clock + self.config.timing.prefill_time(prefill_tokens);
        self.advance_to(end);
        self.log.push(self.clock, EventKind::PrefillDone { batch_id });
        Ok(())
    }

    fn decode(&mut self) {
        let batch_tokens: u64 = self
            .running
            .iter()
            .map(|&k| u64::from(self.requests[k].input_len) + u64::from(self.requests[k].generated))
            .sum();
        let end = self.clock + self.config.timing.decode_time(batch_tokens);
        self.advance_to(end);
        let now = self.clock;
        let mut ids = Vec::with_capacity(self.running.len());
        for &k in &self.running {
            let r = &mut self.requests[k];
            r.generated += 1;
            if r.generated == 1 {
                r.first_token_time = Some(now);
            }
            ids.push(r.request_id);
        }
        self.log.push(now, EventKind::TokensDecoded { request_ids: ids });
        self.scheduler.on_tokens_decoded(&self.requests, &self.running);

        let mut still_running = Vec::with_capacity(self.running.len());
        for k in std::mem::take(&mut self.running) {
            if !self.requests[k].is_done() {
                still_running.push(k);
                continue;
            }
            let r = &mut self.requests[k];
            r.state = RequestState::Finished;
            r.finish_time = Some(now);
            self.pool.release(self.reservations[k]);
            let (request_id, client) = (r.request_id, r.client);
            self.log.push(now, EventKind::Finish { request_id, client });
            self.scheduler.on_request_finished(&self.requests[k]);
        }
        self.running = still_running;
        self.step_index += 1;
        self.stats.steps += 1;
    }

    /// Runs one iteration of the execution loop.
    pub fn step(&mut self) -> Result<StepOutcome, EngineError> {
        if self.done {
            return Ok(StepOutcome::Done);
        }
        if self.running.is_empty() && self.scheduler.queued_len() == 0 {
            let next = [self.pending_arrival_time(), self.scheduler.next_wakeup()]
                .into_iter()
                .flatten()
                .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.min(t))));
            match next {
                Some(t) => self.clock = self.clock.max(t),
                None => {
                    self.done = true;
                    return Ok(StepOutcome::Done);
                }
            }
        }
        if self.past_horizon(self.clock) {
            self.done = true;
            return Ok(StepOutcome::Done);
        }
        self.deliver_arrivals(self.clock, true);
        if self.scheduler.next_wakeup().is_some_and(|t| t <= self.clock) {
            self.scheduler.on_wakeup(self.clock);
        }

        let cadence = self.step_index % u64::from(self.config.admit_every_k_steps) == 0;
        if self.scheduler.queued_len() > 0 && (cadence || self.running.is_empty()) {
            self.admit()?;
        }
        if !self.running.is_empty() {
            self.decode();
        }
        if let Some(view) = self.scheduler.counters() {
            self.log.push(
                self.clock,
                EventKind::CounterSnapshot {
                    counters: view.counters,
                    queued: view.queued,
                },
            );
        }
        Ok(StepOutcome::Continue)
    }

    pub fn into_output(self) -> RunOutput {
        RunOutput {
            log: self.log,
            requests: self.requests,
            stats: self.stats,
        }
    }
}

/// Simulates `arrivals` to completion (or to the configured horizon).
pub fn run(
    config: &EngineConfig,
    scheduler: &mut dyn Scheduler,
    arrivals: Vec<Request>,
) -> Result<RunOutput, EngineError> {
    let mut engine = Engine::new(config.clone(), scheduler, arrivals)?;
    while engine.step()? == StepOutcome::Continue {}
    Ok(engine.into_output())
}
