use crate::types::{Request, SystemLimits};
use serde::{Deserialize, Serialize};

/// How much memory a running request holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReservationPolicy {
    /// `input_len + L_output`: never overflows without knowing the output length.
    #[default]
    Conservative,
    /// `input_len + true_output_len`: packs the pool exactly.
    OracleExact,
}

impl ReservationPolicy {
    pub fn tokens(self, request: &Request, limits: &SystemLimits) -> u64 {
        let output = match self {
            ReservationPolicy::Conservative => limits.max_output,
            ReservationPolicy::OracleExact => request.true_output_len,
        };
        u64::from(request.input_len) + u64::from(output)
    }
}

/// Token-denominated KV-cache pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryPool {
    pub capacity: u64,
    pub reserved: u64,
}

impl MemoryPool {
    pub fn new(capacity: u32) -> Self {
        Self {
            capacity: u64::from(capacity),
            reserved: 0,
        }
    }

    /// Whether `request` can join the running batch now.
    pub fn fits(&self, request: &Request, policy: ReservationPolicy, limits: &SystemLimits) -> bool {
        self.reserved + policy.tokens(request, limits) <= self.capacity
    }

    pub(crate) fn reserve(&mut self, tokens: u64) {
        self.reserved += tokens;
        debug_assert!(self.reserved <= self.capacity);
    }

    pub(crate) fn release(&mut self, tokens: u64) {
        self.reserved -= tokens;
    }

    pub fn free(&self) -> u64 {
        self.capacity - self.reserved
    }
}

/// Handed to a scheduler during one admission round.
///
/// `try_admit` is the only way to move a request into the running batch: it
/// checks the fit predicate and, on success, reserves memory. After the first
/// failed check the round is over and every further call is refused.
pub struct BatchBuilder<'a> {
    pool: &'a mut MemoryPool,
    policy: ReservationPolicy,
    limits: SystemLimits,
    admitted: Vec<usize>,
    blocked_on: Option<usize>,
    calls_after_break: usize,
}

impl<'a> BatchBuilder<'a> {
    pub(crate) fn new(pool: &'a mut MemoryPool, policy: ReservationPolicy, limits: SystemLimits) -> Self {
        Self {
            pool,
            policy,
            limits,
            admitted: Vec::new(),
            blocked_on: None,
            calls_after_break: 0,
        }
    }

    /// Admits the request stored at `key` if it fits. Returns whether it was
    /// admitted; the caller must stop selecting on `false`.
    pub fn try_admit(&mut self, key: usize, request: &Request) -> bool {
        if self.blocked_on.is_some() {
            self.calls_after_break += 1;
            return false;
        }
        if self.pool.fits(request, self.policy, &self.limits) {
            self.pool.reserve(self.policy.tokens(request, &self.limits));
            self.admitted.push(key);
            true
        } else {
            self.blocked_on = Some(key);
            false
        }
    }

    /// Pure fit check with no reservation.
    pub fn fits(&self, request: &Request) -> bool {
        self.pool.fits(request, self.policy, &self.limits)
    }

    pub fn admitted(&self) -> &[usize] {
        &self.admitted
    }

    pub(crate) fn finish(self) -> (Vec<usize>, Option<usize>, usize) {
        (self.admitted, self.blocked_on, self.calls_after_break)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ClientId;

    fn req(input: u32, output: u32) -> Request {
        Request::new(0, ClientId(0), 0.0, input, output)
    }

    #[test]
    fn conservative_fit_arithmetic() {
        let limits = SystemLimits::new(1024, 256, 10_000).unwrap();
        let mut pool = MemoryPool::new(10_000);
        pool.reserve(9_600);
        assert!(!pool.fits(&req(256, 10), ReservationPolicy::Conservative, &limits));
        pool.release(9_600);
        let exact = SystemLimits::new(744, 256, 1000).unwrap();
        let mut small = MemoryPool::new(1000);
        assert!(small.fits(&req(744, 1), ReservationPolicy::Conservative, &exact));
        small.reserve(1);
        assert!(!small.fits(&req(744, 1), ReservationPolicy::Conservative, &exact));
    }

    #[test]
    fn oracle_fit_uses_true_length() {
        let limits = SystemLimits::new(1, 99, 100).unwrap();
        let pool = MemoryPool::new(100);
        assert!(pool.fits(&req(1, 99), ReservationPolicy::OracleExact, &limits));
        assert_eq!(ReservationPolicy::OracleExact.tokens(&req(1, 99), &limits), 100);
    }

    #[test]
    fn builder_refuses_after_break() {
        let limits = SystemLimits::new(10, 10, 40).unwrap();
        let mut pool = MemoryPool::new(40);
        let mut b = BatchBuilder::new(&mut pool, ReservationPolicy::Conservative, limits);
        assert!(b.try_admit(0, &req(10, 1)));
        assert!(b.try_admit(1, &req(10, 1)));
        assert!(!b.try_admit(2, &req(10, 1)));
        assert!(!b.try_admit(3, &req(1, 1)));
        let (admitted, blocked, after) = b.finish();
        assert_eq!(admitted, vec![0, 1]);
        assert_eq!(blocked, Some(2));
        assert_eq!(after, 1);
        assert_eq!(pool.reserved, 40);
    }
}
