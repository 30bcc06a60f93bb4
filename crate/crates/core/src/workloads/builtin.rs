//! Built-in scenarios. Every scenario uses limits of 1024 input tokens,
//! 1024 output tokens and a 10000-token pool, and lasts 10 minutes unless
//! noted.

use super::{ArrivalPattern, ClientSpec, Phase, ScenarioSpec, WorkloadError};
use crate::types::SystemLimits;

pub const BUILTIN_NAMES: &[&str] = &[
    "fig3_overload_2c",
    "fig4_proportional_3c",
    "fig5_onoff_under_2c",
    "fig6_onoff_over_2c",
    "fig7_poisson_short_long",
    "fig8_poisson_mixed",
    "fig9_ramp_2c",
    "fig10_shift_2c",
    "figB11_weighted_4c",
    "figB12_overload_2c",
    "figB12_overload_8c",
];

const TEN_MINUTES: f64 = 600.0;

fn uniform(rate: f64) -> ArrivalPattern {
    ArrivalPattern::Uniform { rate }
}

fn poisson(rate: f64) -> ArrivalPattern {
    ArrivalPattern::Poisson { rate }
}

fn on_off(on_rate: f64) -> ArrivalPattern {
    ArrivalPattern::OnOff {
        on_rate,
        on_seconds: 60.0,
        off_seconds: 60.0,
    }
}

/// One client, one phase for the whole scenario.
fn steady(client: u32, duration: f64, arrival: ArrivalPattern, input: u32, output: u32) -> ClientSpec {
    ClientSpec::new(client, vec![Phase::new(duration, arrival, input, output)])
}

fn scenario(name: &str, duration: f64, clients: Vec<ClientSpec>) -> ScenarioSpec {
    ScenarioSpec {
        name: name.into(),
        duration,
        limits: SystemLimits::default(),
        rng_seed: 0,
        clients,
    }
}

/// `n` clients, each sending 256/256 requests evenly at `rate`.
fn overloaded(name: &str, n: u32, rate: f64) -> ScenarioSpec {
    let d = TEN_MINUTES;
    scenario(name, d, (0..n).map(|c| steady(c, d, uniform(rate), 256, 256)).collect())
}

pub fn builtin(name: &str) -> Result<ScenarioSpec, WorkloadError> {
    let d = TEN_MINUTES;
    let spec = match name {
        // Two overloaded clients at 90 and 180 req/min.
        "fig3_overload_2c" => scenario(
            name,
            d,
            vec![steady(0, d, uniform(90.0), 256, 256), steady(1, d, uniform(180.0), 256, 256)],
        ),
        // 15, 30 and 90 req/min: the first two stay under their share.
        "fig4_proportional_3c" => scenario(
            name,
            d,
            vec![
                steady(0, d, uniform(15.0), 256, 256),
                steady(1, d, uniform(30.0), 256, 256),
                steady(2, d, uniform(90.0), 256, 256),
            ],
        ),
        // ON/OFF client under its share (30 req/min when ON) against a
        // constant 120 req/min client.
        "fig5_onoff_under_2c" => scenario(
            name,
            d,
            vec![steady(0, d, on_off(30.0), 256, 256), steady(1, d, uniform(120.0), 256, 256)],
        ),
        // ON/OFF client over its share (120 req/min when ON) against a
        // constant 180 req/min client.
        "fig6_onoff_over_2c" => scenario(
            name,
            d,
            vec![steady(0, d, on_off(120.0), 256, 256), steady(1, d, uniform(180.0), 256, 256)],
        ),
        // Poisson arrivals: many short requests against fewer long ones.
        "fig7_poisson_short_long" => scenario(
            name,
            d,
            vec![steady(0, d, poisson(480.0), 64, 64), steady(1, d, poisson(90.0), 256, 256)],
        ),
        // Poisson arrivals: short-in/long-out against long-in/short-out.
        "fig8_poisson_mixed" => scenario(
            name,
            d,
            vec![steady(0, d, poisson(480.0), 64, 512), steady(1, d, poisson(90.0), 512, 64)],
        ),
        // A well-behaved client at 30 req/min and one ramping from 30 to
        // 120 req/min.
        "fig9_ramp_2c" => scenario(
            name,
            d,
            vec![
                steady(0, d, uniform(30.0), 256, 256),
                steady(
                    1,
                    d,
                    ArrivalPattern::Ramp {
                        start_rate: 30.0,
                        end_rate: 120.0,
                    },
                    256,
                    256,
                ),
            ],
        ),
        // Three 5-minute phases: ON/OFF under share vs 120, both at 60,
        // then 30 vs 90.
        "fig10_shift_2c" => {
            let p = 300.0;
            let c0 = ClientSpec::new(
                0,
                vec![
                    Phase::new(p, on_off(30.0), 256, 256),
                    Phase::new(p, uniform(60.0), 256, 256),
                    Phase::new(p, uniform(30.0), 256, 256),
                ],
            );
            let c1 = ClientSpec::new(
                1,
                vec![
                    Phase::new(p, uniform(120.0), 256, 256),
                    Phase::new(p, uniform(60.0), 256, 256),
                    Phase::new(p, uniform(90.0), 256, 256),
                ],
            );
            scenario(name, 3.0 * p, vec![c0, c1])
        }
        // Four overloaded clients with weights 1:2:3:4.
        "figB11_weighted_4c" => {
            let mut s = overloaded(name, 4, 120.0);
            for (c, w) in s.clients.iter_mut().zip([1.0, 2.0, 3.0, 4.0]) {
                c.weight = w;
            }
            s
        }
        "figB12_overload_2c" => overloaded(name, 2, 120.0),
        "figB12_overload_8c" => overloaded(name, 8, 120.0),
        _ => {
            return Err(WorkloadError::UnknownBuiltin {
                name: name.into(),
                known: BUILTIN_NAMES.join(", "),
            })
        }
    };
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workloads::generate;

    #[test]
    fn catalog_validates() {
        for name in BUILTIN_NAMES {
            let s = builtin(name).unwrap();
            assert_eq!(s.name, *name);
            s.validate().unwrap();
            assert_eq!(s.limits, SystemLimits::new(1024, 1024, 10_000).unwrap());
        }
    }

    #[test]
    fn catalog_shapes() {
        let fig3 = generate(&builtin("fig3_overload_2c").unwrap()).unwrap();
        assert_eq!(fig3.len(), 2700);
        let fig4 = builtin("fig4_proportional_3c").unwrap();
        assert_eq!(fig4.clients.len(), 3);
        assert_eq!(generate(&fig4).unwrap().len(), (15 + 30 + 90) * 10);
        assert_eq!(builtin("figB12_overload_8c").unwrap().clients.len(), 8);
        assert_eq!(builtin("figB11_weighted_4c").unwrap().weights(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(builtin("fig10_shift_2c").unwrap().duration, 900.0);
    }

    #[test]
    fn unknown_name() {
        assert!(matches!(builtin("fig99"), Err(WorkloadError::UnknownBuiltin { .. })));
    }
}
