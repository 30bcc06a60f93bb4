//! Arrival-trace generation and trace files.
//!
//! A [`ScenarioSpec`] lists clients, each with a sequence of phases. Phases
//! run back to back from time 0; each has an arrival pattern and input and
//! output length distributions. [`generate`] expands a spec into requests
//! sorted by arrival time. Expansion is deterministic: every (client,
//! phase) pair draws from its own ChaCha stream derived from the scenario
//! seed, so patterns without randomness do not depend on the seed at all.
//!
//! Arrival instants, relative to the phase start, for a rate of `R`
//! requests per minute over `D` seconds:
//!
//! - `Uniform`: `k * 60 / R` for `k < floor(R * D / 60)`.
//! - `Poisson`: exponential gaps with mean `60 / R`, stopping at `D`.
//! - `OnOff`: `Uniform` at `on_rate` during each ON period, nothing during
//!   OFF, starting with ON.
//! - `Ramp`: the rate moves linearly from `start_rate` to `end_rate`. With
//!   per-second rates `a = start_rate / 60` and `s = (end_rate - start_rate)
//!   / (60 * D)` the expected count is `N(t) = a t + s t^2 / 2`, and request
//!   `k` (for `k < floor(N(D))`) arrives at `N(t) = k`, i.e.
//!   `t = 2k / (a + sqrt(a^2 + 2 s k))`.

mod builtin;
mod random;
mod trace;

pub use builtin::{builtin, BUILTIN_NAMES};
pub use random::random_scenario;
pub use trace::{load_trace, parse_trace, save_trace, write_trace, TRACE_HEADER};

use crate::types::{ClientId, LimitsError, Request, SystemLimits};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown builtin scenario `{name}` (known: {known})")]
    UnknownBuiltin { name: String, known: String },
    #[error("{path}: line {line}: {message}")]
    Trace {
        path: String,
        line: usize,
        message: String,
    },
    #[error("trace requests outside limits: {0}")]
    TraceLimits(String),
    #[error(transparent)]
    Limits(#[from] LimitsError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn invalid(msg: impl Into<String>) -> WorkloadError {
    WorkloadError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LengthDist {
    Constant { n: u32 },
    /// Uniform over `lo..=hi`.
    UniformRange { lo: u32, hi: u32 },
}

impl LengthDist {
    fn sample(&self, rng: &mut ChaCha8Rng) -> u32 {
        match *self {
            LengthDist::Constant { n } => n,
            LengthDist::UniformRange { lo, hi } => rng.random_range(lo..=hi),
        }
    }

    fn bounds(&self) -> (u32, u32) {
        match *self {
            LengthDist::Constant { n } => (n, n),
            LengthDist::UniformRange { lo, hi } => (lo, hi),
        }
    }
}

/// Rates are in requests per minute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArrivalPattern {
    Uniform { rate: f64 },
    Poisson { rate: f64 },
    OnOff {
        on_rate: f64,
        on_seconds: f64,
        off_seconds: f64,
    },
    Ramp { start_rate: f64, end_rate: f64 },
    Silent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub duration: f64,
    pub arrival: ArrivalPattern,
    pub input_len: LengthDist,
    pub output_len: LengthDist,
}

impl Phase {
    pub fn new(duration: f64, arrival: ArrivalPattern, input: u32, output: u32) -> Self {
        Self {
            duration,
            arrival,
            input_len: LengthDist::Constant { n: input },
            output_len: LengthDist::Constant { n: output },
        }
    }

    /// Arrival offsets from the phase start.
    fn arrival_offsets(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let d = self.duration;
        match self.arrival {
            ArrivalPattern::Silent => Vec::new(),
            ArrivalPattern::Uniform { rate } => uniform_offsets(rate, d),
            ArrivalPattern::Poisson { rate } => {
                let Ok(exp) = Exp::new(rate / 60.0) else {
                    return Vec::new();
                };
                if rate <= 0.0 {
                    return Vec::new();
                }
                let mut out = Vec::new();
                let mut t = 0.0;
                loop {
                    t += exp.sample(rng);
                    if t >= d {
                        break out;
                    }
                    out.push(t);
                }
            }
            ArrivalPattern::OnOff {
                on_rate,
                on_seconds,
                off_seconds,
            } => {
                let mut out = Vec::new();
                let mut start = 0.0;
                while start < d {
                    let on = on_seconds.min(d - start);
                    out.extend(uniform_offsets(on_rate, on).into_iter().map(|t| start + t));
                    start += on_seconds + off_seconds;
                }
                out
            }
            ArrivalPattern::Ramp {
                start_rate,
                end_rate,
            } => {
                let a = start_rate / 60.0;
                let s = (end_rate - start_rate) / (60.0 * d);
                let total = a * d + s * d * d / 2.0;
                let count = (total + 1e-9).floor().max(0.0) as u64;
                (0..count)
                    .map(|k| {
                        let k = k as f64;
                        let denom = a + (a * a + 2.0 * s * k).max(0.0).sqrt();
                        if k == 0.0 {
                            0.0
                        } else {
                            2.0 * k / denom
                        }
                    })
                    .collect()
            }
        }
    }
}

fn uniform_offsets(rate: f64, duration: f64) -> Vec<f64> {
    if rate <= 0.0 || duration <= 0.0 {
        return Vec::new();
    }
    // The epsilon keeps 90/min over 60 s at exactly 90.
    let count = (rate * duration / 60.0 + 1e-9).floor() as u64;
    let gap = 60.0 / rate;
    (0..count).map(|k| k as f64 * gap).collect()
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSpec {
    pub client: ClientId,
    #[serde(default = "default_weight")]
    pub weight: f64,
    pub phases: Vec<Phase>,
}

impl ClientSpec {
    pub fn new(client: u32, phases: Vec<Phase>) -> Self {
        Self {
            client: ClientId(client),
            weight: 1.0,
            phases,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub duration: f64,
    pub limits: SystemLimits,
    #[serde(default)]
    pub rng_seed: u64,
    pub clients: Vec<ClientSpec>,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        self.limits.validate()?;
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(invalid(format!("duration must be finite and >= 0, got {}", self.duration)));
        }
        for (i, c) in self.clients.iter().enumerate() {
            if c.client.index() != i {
                return Err(invalid(format!(
                    "clients must be numbered 0..n in order; position {i} holds {}",
                    c.client
                )));
            }
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return Err(invalid(format!("{}: weight must be positive", c.client)));
            }
            let mut total = 0.0;
            for (j, p) in c.phases.iter().enumerate() {
                let at = format!("{} phase {j}", c.client);
                if !(p.duration.is_finite() && p.duration >= 0.0) {
                    return Err(invalid(format!("{at}: bad duration {}", p.duration)));
                }
                total += p.duration;
                let rates: Vec<f64> = match p.arrival {
                    ArrivalPattern::Uniform { rate } | ArrivalPattern::Poisson { rate } => vec![rate],
                    ArrivalPattern::OnOff {
                        on_rate,
                        on_seconds,
                        off_seconds,
                    } => {
                        if !(on_seconds > 0.0 && off_seconds >= 0.0 && off_seconds.is_finite()) {
                            return Err(invalid(format!("{at}: ON period must be positive")));
                        }
                        vec![on_rate]
                    }
                    ArrivalPattern::Ramp {
                        start_rate,
                        end_rate,
                    } => vec![start_rate, end_rate],
                    ArrivalPattern::Silent => vec![],
                };
                if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
                    return Err(invalid(format!("{at}: rates must be finite and >= 0")));
                }
                for (what, dist, max) in [
                    ("input", &p.input_len, self.limits.max_input),
                    ("output", &p.output_len, self.limits.max_output),
                ] {
                    let (lo, hi) = dist.bounds();
                    if lo == 0 || lo > hi || hi > max {
                        return Err(invalid(format!(
                            "{at}: {what} lengths {lo}..={hi} outside 1..={max}"
                        )));
                    }
                }
            }
            if total > self.duration + 1e-9 {
                return Err(invalid(format!(
                    "{}: phases last {total} s, longer than the scenario ({} s)",
                    c.client, self.duration
                )));
            }
        }
        Ok(())
    }

    pub fn weights(&self) -> Vec<f64> {
        self.clients.iter().map(|c| c.weight).collect()
    }

    pub fn from_toml(text: &str) -> Result<Self, WorkloadError> {
        let spec: ScenarioSpec = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario specs serialize to TOML")
    }

    pub fn load(path: &Path) -> Result<Self, WorkloadError> {
        let text = std::fs::read_to_string(path).map_err(|e| WorkloadError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    /// Stretches or truncates every client's phases to `duration`: the last
    /// phase of each client absorbs the difference.
    pub fn with_duration(mut self, duration: f64) -> Self {
        for c in &mut self.clients {
            let mut start = 0.0;
            c.phases.retain_mut(|p| {
                if start >= duration {
                    return false;
                }
                p.duration = p.duration.min(duration - start);
                start += p.duration;
                true
            });
            if let Some(last) = c.phases.last_mut() {
                last.duration += duration - start;
            }
        }
        self.duration = duration;
        self
    }

    /// Replaces every length distribution with constants.
    pub fn with_request_len(mut self, input: u32, output: u32) -> Self {
        for p in self.clients.iter_mut().flat_map(|c| c.phases.iter_mut()) {
            p.input_len = LengthDist::Constant { n: input };
            p.output_len = LengthDist::Constant { n: output };
        }
        self
    }
}

fn phase_rng(seed: u64, client: usize, phase: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((client as u64) << 32) | phase as u64);
    rng
}

/// Expands `spec` into requests sorted by arrival time, ties broken by
/// client id. Request ids follow that order.
pub fn generate(spec: &ScenarioSpec) -> Result<Vec<Request>, WorkloadError> {
    spec.validate()?;
    let mut out = Vec::new();
    for (ci, c) in spec.clients.iter().enumerate() {
        let mut start = 0.0;
        for (pi, p) in c.phases.iter().enumerate() {
            let mut rng = phase_rng(spec.rng_seed, ci, pi);
            for offset in p.arrival_offsets(&mut rng) {
                let input = p.input_len.sample(&mut rng);
                let output = p.output_len.sample(&mut rng);
                out.push(Request::new(0, c.client, start + offset, input, output));
            }
            start += p.duration;
        }
    }
    out.sort_by(|a, b| {
        a.arrival_time
            .total_cmp(&b.arrival_time)
            .then(a.client.cmp(&b.client))
    });
    for (i, r) in out.iter_mut().enumerate() {
        r.request_id = i as u64;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(arrival: ArrivalPattern, duration: f64) -> ScenarioSpec {
        ScenarioSpec {
            name: "t".into(),
            duration,
            limits: SystemLimits::default(),
            rng_seed: 1,
            clients: vec![ClientSpec::new(0, vec![Phase::new(duration, arrival, 256, 256)])],
        }
    }

    #[test]
    fn uniform_spacing() {
        let r = generate(&one(ArrivalPattern::Uniform { rate: 90.0 }, 60.0)).unwrap();
        assert_eq!(r.len(), 90);
        let expect = [0.0, 60.0 / 90.0, 120.0 / 90.0];
        for (req, t) in r.iter().zip(expect) {
            assert!((req.arrival_time - t).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_count_is_floor() {
        let r = generate(&one(ArrivalPattern::Uniform { rate: 7.0 }, 100.0)).unwrap();
        assert_eq!(r.len(), 11);
    }

    #[test]
    fn silent_is_empty() {
        assert!(generate(&one(ArrivalPattern::Silent, 60.0)).unwrap().is_empty());
    }

    #[test]
    fn poisson_count_and_reproducibility() {
        let spec = one(ArrivalPattern::Poisson { rate: 60.0 }, 600.0);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert!((500..=700).contains(&a.len()), "{}", a.len());
        assert_eq!(a, b);
        let mut other = spec.clone();
        other.rng_seed = 2;
        assert_ne!(generate(&other).unwrap(), a);
    }

    #[test]
    fn seed_only_moves_stochastic_phases() {
        let mut spec = one(ArrivalPattern::Uniform { rate: 30.0 }, 60.0);
        spec.clients.push(ClientSpec::new(
            1,
            vec![Phase::new(60.0, ArrivalPattern::Poisson { rate: 30.0 }, 8, 8)],
        ));
        let a = generate(&spec).unwrap();
        spec.rng_seed = 99;
        let b = generate(&spec).unwrap();
        let only = |v: &[Request], c: u32| -> Vec<f64> {
            v.iter().filter(|r| r.client == ClientId(c)).map(|r| r.arrival_time).collect()
        };
        assert_eq!(only(&a, 0), only(&b, 0));
        assert_ne!(only(&a, 1), only(&b, 1));
    }

    #[test]
    fn on_off_alternates() {
        let spec = one(
            ArrivalPattern::OnOff {
                on_rate: 30.0,
                on_seconds: 60.0,
                off_seconds: 60.0,
            },
            300.0,
        );
        let r = generate(&spec).unwrap();
        assert_eq!(r.len(), 90);
        assert!(r.iter().all(|q| {
            let m = (q.arrival_time / 60.0).floor() as u64;
            m % 2 == 0
        }));
    }

    #[test]
    fn ramp_matches_cumulative_rate() {
        let d = 600.0;
        let spec = one(
            ArrivalPattern::Ramp {
                start_rate: 30.0,
                end_rate: 120.0,
            },
            d,
        );
        let r = generate(&spec).unwrap();
        assert_eq!(r.len(), 750);
        let n = |t: f64| 0.5 * t + (1.5 / d) * t * t / 2.0;
        for (k, q) in r.iter().enumerate() {
            assert!((n(q.arrival_time) - k as f64).abs() < 1e-6);
        }
        // A flat ramp is a uniform pattern.
        let flat = generate(&one(
            ArrivalPattern::Ramp {
                start_rate: 30.0,
                end_rate: 30.0,
            },
            60.0,
        ))
        .unwrap();
        let uni = generate(&one(ArrivalPattern::Uniform { rate: 30.0 }, 60.0)).unwrap();
        assert_eq!(flat.len(), uni.len());
        for (a, b) in flat.iter().zip(&uni) {
            assert!((a.arrival_time - b.arrival_time).abs() < 1e-9);
        }
    }

    #[test]
    fn validation_errors() {
        let mut s = one(ArrivalPattern::Uniform { rate: 1.0 }, 60.0);
        s.clients[0].phases[0].input_len = LengthDist::Constant { n: 2000 };
        assert!(matches!(s.validate(), Err(WorkloadError::Invalid(_))));
        let mut s = one(ArrivalPattern::Uniform { rate: 1.0 }, 60.0);
        s.clients[0].phases[0].duration = 61.0;
        assert!(s.validate().is_err());
        let mut s = one(ArrivalPattern::Uniform { rate: -1.0 }, 60.0);
        assert!(s.validate().is_err());
        s.clients[0].phases[0].arrival = ArrivalPattern::Uniform { rate: 1.0 };
        s.clients[0].client = ClientId(3);
        assert!(s.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut s = one(ArrivalPattern::Poisson { rate: 12.0 }, 60.0);
        s.clients[0].phases[0].output_len = LengthDist::UniformRange { lo: 2, hi: 900 };
        let back = ScenarioSpec::from_toml(&s.to_toml()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn resizing_duration() {
        let s = builtin("fig10_shift_2c").unwrap().with_duration(400.0);
        for c in &s.clients {
            let total: f64 = c.phases.iter().map(|p| p.duration).sum();
            assert!((total - 400.0).abs() < 1e-9);
        }
        s.validate().unwrap();
        let longer = builtin("fig3_overload_2c").unwrap().with_duration(900.0);
        assert_eq!(longer.clients[0].phases[0].duration, 900.0);
    }
}
