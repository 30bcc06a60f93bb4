//! Domain types shared by the simulator, the schedulers and the metrics.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Dense client identifier, `0..n` within one scenario.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct ClientId(pub u32);

impl ClientId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "client{}", self.0)
    }
}

impl From<u32> for ClientId {
    fn from(v: u32) -> Self {
        ClientId(v)
    }
}

/// Lifecycle of a request inside the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestState {
    Queued,
    Running,
    Finished,
    Rejected,
}

/// One client request.
///
/// `true_output_len` stands in for the position of the end-of-sequence token.
/// Schedulers must not read it, with the single exception of the oracle
/// length predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub request_id: u64,
    pub client: ClientId,
    /// Arrival time in simulated seconds.
    pub arrival_time: f64,
    pub input_len: u32,
    pub true_output_len: u32,
    /// Output tokens produced so far.
    pub generated: u32,
    pub state: RequestState,
    pub dispatch_time: Option<f64>,
    pub first_token_time: Option<f64>,
    pub finish_time: Option<f64>,
}

impl Request {
    pub fn new(
        request_id: u64,
        client: ClientId,
        arrival_time: f64,
        input_len: u32,
        true_output_len: u32,
    ) -> Self {
        Self {
            request_id,
            client,
            arrival_time,
            input_len,
            true_output_len,
            generated: 0,
            state: RequestState::Queued,
            dispatch_time: None,
            first_token_time: None,
            finish_time: None,
        }
    }

    pub fn is_done(&self) -> bool {
        self.generated >= self.true_output_len
    }

    /// First-token latency, if a token has been produced.
    pub fn response_time(&self) -> Option<f64> {
        self.first_token_time.map(|t| t - self.arrival_time)
    }

    /// Checks the length invariants against `limits`.
    pub fn check_limits(&self, limits: &SystemLimits) -> Result<(), LimitsError> {
        if self.input_len == 0 || self.input_len > limits.max_input {
            return Err(LimitsError::InputLength {
                request_id: self.request_id,
                len: self.input_len,
                max: limits.max_input,
            });
        }
        if self.true_output_len == 0 || self.true_output_len > limits.max_output {
            return Err(LimitsError::OutputLength {
                request_id: self.request_id,
                len: self.true_output_len,
                max: limits.max_output,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LimitsError {
    #[error("limits must be positive (max_input={max_input}, max_output={max_output}, pool={pool_tokens})")]
    NonPositive {
        max_input: u32,
        max_output: u32,
        pool_tokens: u32,
    },
    #[error("memory pool of {pool_tokens} tokens cannot hold one request of {max_input}+{max_output} tokens")]
    PoolTooSmall {
        max_input: u32,
        max_output: u32,
        pool_tokens: u32,
    },
    #[error("request {request_id}: input length {len} outside [1, {max}]")]
    InputLength { request_id: u64, len: u32, max: u32 },
    #[error("request {request_id}: output length {len} outside [1, {max}]")]
    OutputLength { request_id: u64, len: u32, max: u32 },
}

/// Per-request token limits and the KV-cache pool size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemLimits {
    /// Maximum input tokens of one request.
    pub max_input: u32,
    /// Maximum output tokens of one request.
    pub max_output: u32,
    /// Tokens that fit in the running batch.
    pub pool_tokens: u32,
}

impl SystemLimits {
    pub fn new(max_input: u32, max_output: u32, pool_tokens: u32) -> Result<Self, LimitsError> {
        let limits = Self {
            max_input,
            max_output,
            pool_tokens,
        };
        limits.validate()?;
        Ok(limits)
    }

    pub fn validate(&self) -> Result<(), LimitsError> {
        if self.max_input == 0 || self.max_output == 0 || self.pool_tokens == 0 {
            return Err(LimitsError::NonPositive {
                max_input: self.max_input,
                max_output: self.max_output,
                pool_tokens: self.pool_tokens,
            });
        }
        if u64::from(self.pool_tokens) < u64::from(self.max_input) + u64::from(self.max_output) {
            return Err(LimitsError::PoolTooSmall {
                max_input: self.max_input,
                max_output: self.max_output,
                pool_tokens: self.pool_tokens,
            });
        }
        Ok(())
    }
}

impl Default for SystemLimits {
    /// 1024/1024 request limits with a 10000-token pool.
    fn default() -> Self {
        Self {
            max_input: 1024,
            max_output: 1024,
            pool_tokens: 10_000,
        }
    }
}
