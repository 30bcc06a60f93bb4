//! Textual scheduler and cost-model specifications, e.g. `vtc`,
//! `rpm(5)`, `vtc_weighted(1,2,3,4)`, `vtc_predict(noisy(0.5))`,
//! `weighted(1,2)`, `profiled`, `custom(path/to/table.json)`.

use super::{Fcfs, Predictor, PredictorKind, Rpm, Scheduler, StrictPriority, Vtc};
use crate::cost::{CostError, CostModel, TabulatedCost};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("cannot parse `{input}`: {reason}")]
    Parse { input: String, reason: String },
    #[error(transparent)]
    Cost(#[from] CostError),
}

fn parse_err(input: &str, reason: impl Into<String>) -> SpecError {
    SpecError::Parse {
        input: input.into(),
        reason: reason.into(),
    }
}

/// Splits `name(args)` into `("name", Some("args"))`, or `name` into
/// `("name", None)`.
fn split_call(s: &str) -> Result<(&str, Option<&str>), SpecError> {
    let s = s.trim();
    match s.find('(') {
        None => Ok((s, None)),
        Some(open) => {
            let inner = s[open + 1..]
                .strip_suffix(')')
                .ok_or_else(|| parse_err(s, "missing closing parenthesis"))?;
            Ok((s[..open].trim(), Some(inner.trim())))
        }
    }
}

fn parse_num<T: FromStr>(input: &str, arg: &str) -> Result<T, SpecError> {
    arg.trim()
        .parse()
        .map_err(|_| parse_err(input, format!("`{arg}` is not a valid number")))
}

fn parse_list(input: &str, args: &str) -> Result<Vec<f64>, SpecError> {
    args.split(',').map(|a| parse_num(input, a)).collect()
}

pub type PredictorSpec = PredictorKind;

impl FromStr for PredictorKind {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, SpecError> {
        let (name, args) = split_call(s)?;
        match (name, args) {
            ("oracle", None) => Ok(PredictorKind::Oracle),
            ("noisy", None) => Ok(PredictorKind::Noisy { fraction: 0.5 }),
            ("noisy", Some(a)) => {
                let fraction: f64 = parse_num(s, a)?;
                if !(0.0..=1.0).contains(&fraction) {
                    return Err(parse_err(s, "noise fraction must be in [0, 1]"));
                }
                Ok(PredictorKind::Noisy { fraction })
            }
            ("moving_avg", None) => Ok(PredictorKind::MovingAverage { window: 5 }),
            ("moving_avg", Some(a)) => {
                let window: usize = parse_num(s, a)?;
                if window == 0 {
                    return Err(parse_err(s, "window must be at least 1"));
                }
                Ok(PredictorKind::MovingAverage { window })
            }
            _ => Err(parse_err(s, "expected oracle, noisy(f) or moving_avg(n)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SchedulerSpec {
    Fcfs,
    Rpm { limit: u32, defer: bool },
    Lcf,
    Vtc,
    /// Empty weights mean "use the scenario's client weights".
    VtcWeighted(Vec<f64>),
    VtcPredict(PredictorKind),
    Priority,
}

impl FromStr for SchedulerSpec {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, SpecError> {
        let (name, args) = split_call(s)?;
        let no_args = |spec: SchedulerSpec| match args {
            None => Ok(spec),
            Some(_) => Err(parse_err(s, format!("`{name}` takes no arguments"))),
        };
        match name {
            "fcfs" => no_args(SchedulerSpec::Fcfs),
            "lcf" => no_args(SchedulerSpec::Lcf),
            "vtc" => no_args(SchedulerSpec::Vtc),
            "priority" => no_args(SchedulerSpec::Priority),
            "rpm" | "rpm_defer" => {
                let a = args.ok_or_else(|| parse_err(s, "rpm needs a limit, e.g. rpm(5)"))?;
                Ok(SchedulerSpec::Rpm {
                    limit: parse_num(s, a)?,
                    defer: name == "rpm_defer",
                })
            }
            "vtc_weighted" => {
                let weights = match args {
                    None => Vec::new(),
                    Some(a) => parse_list(s, a)?,
                };
                if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return Err(parse_err(s, "weights must be positive"));
                }
                Ok(SchedulerSpec::VtcWeighted(weights))
            }
            "vtc_predict" => {
                let kind = match args {
                    None => PredictorKind::Oracle,
                    Some(a) => a.parse()?,
                };
                Ok(SchedulerSpec::VtcPredict(kind))
            }
            _ => Err(parse_err(
                s,
                "expected fcfs, rpm(n), lcf, vtc, vtc_weighted(w..), vtc_predict(p) or priority",
            )),
        }
    }
}

impl fmt::Display for SchedulerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchedulerSpec::Fcfs => write!(f, "fcfs"),
            SchedulerSpec::Rpm { limit, defer: false } => write!(f, "rpm({limit})"),
            SchedulerSpec::Rpm { limit, defer: true } => write!(f, "rpm_defer({limit})"),
            SchedulerSpec::Lcf => write!(f, "lcf"),
            SchedulerSpec::Vtc => write!(f, "vtc"),
            SchedulerSpec::VtcWeighted(w) if w.is_empty() => write!(f, "vtc_weighted"),
            SchedulerSpec::VtcWeighted(w) => {
                let parts: Vec<String> = w.iter().map(|v| v.to_string()).collect();
                write!(f, "vtc_weighted({})", parts.join(","))
            }
            SchedulerSpec::VtcPredict(k) => write!(f, "vtc_predict({k})"),
            SchedulerSpec::Priority => write!(f, "priority"),
        }
    }
}

impl SchedulerSpec {
    /// Instantiates the scheduler.
    ///
    /// `client_weights` fills in `vtc_weighted` without explicit weights;
    /// `seed` drives the noisy predictor.
    pub fn build(
        &self,
        cost: &CostModel,
        max_output: u32,
        client_weights: &[f64],
        seed: u64,
    ) -> Box<dyn Scheduler> {
        match self {
            SchedulerSpec::Fcfs => Box::new(Fcfs::new()),
            SchedulerSpec::Rpm { limit, defer: false } => Box::new(Rpm::new(*limit)),
            SchedulerSpec::Rpm { limit, defer: true } => Box::new(Rpm::deferring(*limit)),
            SchedulerSpec::Lcf => Box::new(Vtc::least_counter_first(cost.clone())),
            SchedulerSpec::Vtc => Box::new(Vtc::standard(cost.clone())),
            SchedulerSpec::VtcWeighted(w) => {
                let weights = if w.is_empty() { client_weights.to_vec() } else { w.clone() };
                Box::new(Vtc::weighted(cost.clone(), weights))
            }
            SchedulerSpec::VtcPredict(kind) => Box::new(Vtc::with_prediction(
                cost.clone(),
                Predictor::new(*kind, max_output, seed),
            )),
            SchedulerSpec::Priority => Box::new(StrictPriority::new()),
        }
    }

    /// Weights the scheduler normalizes service by, if any.
    pub fn weights<'a>(&'a self, client_weights: &'a [f64]) -> Option<&'a [f64]> {
        match self {
            SchedulerSpec::VtcWeighted(w) if w.is_empty() => Some(client_weights),
            SchedulerSpec::VtcWeighted(w) => Some(w),
            _ => None,
        }
    }
}

/// Parses `weighted(w_p,w_q)`, `weighted` (1, 2), `profiled` or
/// `custom(path)`.
pub fn parse_cost_model(s: &str) -> Result<CostModel, SpecError> {
    let (name, args) = split_call(s)?;
    match (name, args) {
        ("weighted", None) => Ok(CostModel::default()),
        ("weighted", Some(a)) => match parse_list(s, a)?.as_slice() {
            &[wp, wq] => Ok(CostModel::weighted(wp, wq)),
            _ => Err(parse_err(s, "weighted takes two weights")),
        },
        ("profiled", None) => Ok(CostModel::profiled()),
        ("custom", Some(path)) => Ok(CostModel::Custom(TabulatedCost::load(Path::new(path))?)),
        _ => Err(parse_err(s, "expected weighted(w_p,w_q), profiled or custom(path)")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for s in [
            "fcfs",
            "rpm(5)",
            "rpm_defer(3)",
            "lcf",
            "vtc",
            "vtc_weighted",
            "vtc_weighted(1,2,3,4)",
            "vtc_predict(oracle)",
            "vtc_predict(noisy(0.5))",
            "vtc_predict(moving_avg(5))",
            "priority",
        ] {
            let spec: SchedulerSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
    }

    #[test]
    fn scheduler_names_match_specs() {
        let cost = CostModel::default();
        for s in ["fcfs", "rpm(5)", "lcf", "vtc", "vtc_predict(noisy(0.5))", "priority"] {
            let spec: SchedulerSpec = s.parse().unwrap();
            assert_eq!(spec.build(&cost, 1024, &[], 0).name(), s);
        }
    }

    #[test]
    fn rejects_garbage() {
        for s in ["", "vtcx", "rpm", "rpm(x)", "vtc(1)", "vtc_weighted(1,-1)", "vtc_predict(psychic)", "rpm(5"] {
            assert!(s.parse::<SchedulerSpec>().is_err(), "{s}");
        }
    }

    #[test]
    fn cost_models() {
        assert_eq!(parse_cost_model("weighted(1,1)").unwrap(), CostModel::weighted(1.0, 1.0));
        assert_eq!(parse_cost_model("weighted").unwrap(), CostModel::weighted(1.0, 2.0));
        assert_eq!(parse_cost_model("profiled").unwrap(), CostModel::profiled());
        assert!(parse_cost_model("weighted(1)").is_err());
        assert!(matches!(
            parse_cost_model("custom(/nonexistent.json)"),
            Err(SpecError::Cost(CostError::Io { .. }))
        ));
    }
}
