//! Seeded random scenarios for property checks and fuzzing the monitors.

use super::{ArrivalPattern, ClientSpec, LengthDist, Phase, ScenarioSpec};
use crate::types::SystemLimits;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_length(rng: &mut ChaCha8Rng, max: u32) -> LengthDist {
    if rng.random_bool(0.5) {
        LengthDist::Constant {
            n: rng.random_range(1..=max),
        }
    } else {
        let lo = rng.random_range(1..=max);
        LengthDist::UniformRange {
            lo,
            hi: rng.random_range(lo..=max),
        }
    }
}

fn random_arrival(rng: &mut ChaCha8Rng) -> ArrivalPattern {
    let rate = rng.random_range(2.0..240.0);
    match rng.random_range(0..5) {
        0 => ArrivalPattern::Uniform { rate },
        1 => ArrivalPattern::Poisson { rate },
        2 => ArrivalPattern::OnOff {
            on_rate: rate,
            on_seconds: rng.random_range(2.0..20.0),
            off_seconds: rng.random_range(2.0..20.0),
        },
        3 => ArrivalPattern::Ramp {
            start_rate: rng.random_range(0.0..rate),
            end_rate: rate,
        },
        _ => ArrivalPattern::Silent,
    }
}

/// A scenario with 2 to 8 weighted clients, each running 1 to 3 phases of
/// mixed arrival patterns and length distributions, over 10 to 40 seconds
/// and a randomly sized pool. The same seed always gives the same spec.
pub fn random_scenario(seed: u64) -> ScenarioSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_input = rng.random_range(16..=512);
    let max_output = rng.random_range(16..=512);
    let pool = rng.random_range((max_input + max_output)..=4 * (max_input + max_output));
    let limits = SystemLimits {
        max_input,
        max_output,
        pool_tokens: pool,
    };
    let duration = rng.random_range(10.0..40.0);
    let n = rng.random_range(2..=8u32);
    let clients = (0..n)
        .map(|c| {
            let count = rng.random_range(1..=3);
            let mut left = duration;
            let phases = (0..count)
                .map(|i| {
                    let d = if i + 1 == count { left } else { rng.random_range(0.0..left) };
                    left -= d;
                    Phase {
                        duration: d,
                        arrival: random_arrival(&mut rng),
                        input_len: random_length(&mut rng, max_input),
                        output_len: random_length(&mut rng, max_output),
                    }
                })
                .collect();
            ClientSpec {
                weight: rng.random_range(0.25..4.0),
                ..ClientSpec::new(c, phases)
            }
        })
        .collect();
    ScenarioSpec {
        name: format!("random-{seed}"),
        duration,
        limits,
        rng_seed: seed,
        clients,
    }
}
