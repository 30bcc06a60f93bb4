//! Discrete-event simulator of continuous-batching LLM serving with
//! token-level fair schedulers.
//!
//! - [`engine`] runs the execution loop over a token-denominated memory pool
//!   and records an [`engine::EventLog`].
//! - [`schedulers`] holds the policies: virtual token counters and their
//!   variants, FCFS, per-client rate limits and least-counter-first.
//! - [`workloads`] builds arrival traces from scenario specs and reads and
//!   writes trace files.
//! - [`metrics`] replays logs into service curves, fairness statistics and
//!   monitors of the scheduling guarantees.

pub mod cost;
pub mod engine;
pub mod metrics;
pub mod schedulers;
pub mod types;
pub mod workloads;

pub use cost::{CostError, CostModel, FairnessBound, ProfiledCost, TabulatedCost};
pub use engine::{run, Engine, EngineConfig, EngineError, EventLog, ReservationPolicy, RunOutput, TimingModel};
pub use schedulers::{Scheduler, SchedulerSpec};
pub use types::{ClientId, Request, RequestState, SystemLimits};
pub use workloads::{builtin, generate, ScenarioSpec};
