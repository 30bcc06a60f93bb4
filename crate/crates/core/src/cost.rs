//! Service cost models.
//!
//! A cost model is a function `h(n_p, n_q)` from processed input tokens and
//! processed output tokens of one request to service units. The service a
//! request contributes is charged incrementally: `h(n_p, 0) - h(0, 0)` when
//! it is admitted, then `h(n_p, k) - h(n_p, k - 1)` for its k-th output
//! token. The increments telescope to `h(n_p, n_q) - h(0, 0)`, so a constant
//! term in `h` is never charged.

use crate::types::SystemLimits;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("token counts ({n_p}, {n_q}) outside [0, {max_input}] x [0, {max_output}]")]
    OutOfRange {
        n_p: u32,
        n_q: u32,
        max_input: u32,
        max_output: u32,
    },
    #[error("marginal output cost is undefined for the zeroth output token")]
    ZeroOutputIndex,
    #[error("cost function decreases {axis} at (n_p={n_p}, n_q={n_q})")]
    NotMonotone {
        axis: &'static str,
        n_p: u32,
        n_q: u32,
    },
    #[error("cost function is negative at the origin: h(0,0) = {0}")]
    NegativeOrigin(f64),
    #[error("token weights must be finite and non-negative (w_p={0}, w_q={1})")]
    InvalidWeights(f64, f64),
    #[error("invalid cost table: {0}")]
    InvalidTable(String),
    #[error("cannot read cost table {path}: {message}")]
    Io { path: String, message: String },
}

/// Coefficients of `h = c_p*n_p + c_q*n_q + c_pq*n_p*n_q + c_qq*n_q^2 + c_0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfiledCost {
    pub input: f64,
    pub output: f64,
    pub cross: f64,
    pub output_sq: f64,
    pub constant: f64,
}

impl ProfiledCost {
    /// Quadratic fit of per-request prefill plus decode time of a 7B model on
    /// a 24 GB accelerator.
    pub const LLAMA2_7B_A10G: ProfiledCost = ProfiledCost {
        input: 2.1,
        output: 1.0,
        cross: 0.04,
        output_sq: 0.032,
        constant: 11.46,
    };

    fn eval(&self, n_p: f64, n_q: f64) -> f64 {
        self.input * n_p
            + self.output * n_q
            + self.cross * n_p * n_q
            + self.output_sq * n_q * n_q
            + self.constant
    }
}

/// A cost function tabulated on a grid and interpolated bilinearly.
///
/// Grids start at zero and are strictly increasing. `values[i][j]` is
/// `h(input_points[i], output_points[j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedCost {
    pub input_points: Vec<u32>,
    pub output_points: Vec<u32>,
    pub values: Vec<Vec<f64>>,
}

impl TabulatedCost {
    pub fn load(path: &Path) -> Result<Self, CostError> {
        let io = |e: &dyn std::fmt::Display| CostError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let text = std::fs::read_to_string(path).map_err(|e| io(&e))?;
        let table: TabulatedCost = serde_json::from_str(&text).map_err(|e| io(&e))?;
        table.check_shape()?;
        Ok(table)
    }

    fn check_shape(&self) -> Result<(), CostError> {
        let axis_ok = |p: &[u32]| p.first() == Some(&0) && p.windows(2).all(|w| w[0] < w[1]);
        if !axis_ok(&self.input_points) || !axis_ok(&self.output_points) {
            return Err(CostError::InvalidTable(
                "grid points must start at 0 and strictly increase".into(),
            ));
        }
        if self.values.len() != self.input_points.len()
            || self
                .values
                .iter()
                .any(|row| row.len() != self.output_points.len())
        {
            return Err(CostError::InvalidTable(
                "values must be an input_points x output_points matrix".into(),
            ));
        }
        if self.values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CostError::InvalidTable("values must be finite".into()));
        }
        Ok(())
    }

    /// Locates `x` in `points`: returns the lower cell index and the fraction
    /// within the cell. Values beyond the last point clamp to it.
    fn locate(points: &[u32], x: f64) -> (usize, f64) {
        if points.len() == 1 {
            return (0, 0.0);
        }
        let last = points.len() - 1;
        let upper = points.partition_point(|&p| f64::from(p) <= x);
        if upper > last {
            return (last - 1, 1.0);
        }
        let lo = upper.saturating_sub(1);
        let (a, b) = (f64::from(points[lo]), f64::from(points[lo + 1]));
        (lo, (x - a) / (b - a))
    }

    fn eval(&self, n_p: f64, n_q: f64) -> f64 {
        let (i, fi) = Self::locate(&self.input_points, n_p);
        let (j, fj) = Self::locate(&self.output_points, n_q);
        let v = |a: usize, b: usize| {
            let a = a.min(self.input_points.len() - 1);
            let b = b.min(self.output_points.len() - 1);
            self.values[a][b]
        };
        let low = v(i, j) * (1.0 - fj) + v(i, j + 1) * fj;
        let high = v(i + 1, j) * (1.0 - fj) + v(i + 1, j + 1) * fj;
        low * (1.0 - fi) + high * fi
    }

    /// Largest slope along the output axis over all grid rows.
    fn max_output_slope(&self) -> f64 {
        let mut best: f64 = 0.0;
        for row in &self.values {
            for (j, w) in self.output_points.windows(2).enumerate() {
                let slope = (row[j + 1] - row[j]) / f64::from(w[1] - w[0]);
                best = best.max(slope);
            }
        }
        best
    }
}

/// Maps processed tokens of a request to service units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostModel {
    /// `w_p * n_p + w_q * n_q`.
    WeightedTokens {
        input_weight: f64,
        output_weight: f64,
    },
    Profiled(ProfiledCost),
    Custom(TabulatedCost),
}

impl Default for CostModel {
    /// Input tokens at weight 1, output tokens at weight 2.
    fn default() -> Self {
        CostModel::weighted(1.0, 2.0)
    }
}

impl CostModel {
    pub fn weighted(input_weight: f64, output_weight: f64) -> Self {
        CostModel::WeightedTokens {
            input_weight,
            output_weight,
        }
    }

    pub fn profiled() -> Self {
        CostModel::Profiled(ProfiledCost::LLAMA2_7B_A10G)
    }

    /// Raw evaluation of `h` with no range checks.
    pub fn h(&self, n_p: u32, n_q: u32) -> f64 {
        let (p, q) = (f64::from(n_p), f64::from(n_q));
        match self {
            CostModel::WeightedTokens {
                input_weight,
                output_weight,
            } => input_weight * p + output_weight * q,
            CostModel::Profiled(c) => c.eval(p, q),
            CostModel::Custom(t) => t.eval(p, q),
        }
    }

    /// Checks that `h` is non-negative at the origin and non-decreasing in
    /// both arguments over the request domain of `limits`.
    pub fn validate(&self, limits: &SystemLimits) -> Result<(), CostError> {
        let (lin, lout) = (limits.max_input, limits.max_output);
        match self {
            CostModel::WeightedTokens {
                input_weight,
                output_weight,
            } => {
                let ok = |w: f64| w.is_finite() && w >= 0.0;
                if !ok(*input_weight) || !ok(*output_weight) {
                    return Err(CostError::InvalidWeights(*input_weight, *output_weight));
                }
            }
            CostModel::Profiled(c) => {
                // Both partial differences are affine, so corners suffice.
                for n_q in [0, lout] {
                    if c.input + c.cross * f64::from(n_q) < 0.0 {
                        return Err(CostError::NotMonotone {
                            axis: "in n_p",
                            n_p: 0,
                            n_q,
                        });
                    }
                }
                for n_p in [0, lin] {
                    for n_q in [1, lout] {
                        if self.h(n_p, n_q) - self.h(n_p, n_q - 1) < 0.0 {
                            return Err(CostError::NotMonotone {
                                axis: "in n_q",
                                n_p,
                                n_q,
                            });
                        }
                    }
                }
            }
            CostModel::Custom(t) => {
                t.check_shape()?;
                let covers = |p: &[u32], max: u32| p.last().is_some_and(|&l| l >= max);
                if !covers(&t.input_points, lin) || !covers(&t.output_points, lout) {
                    return Err(CostError::InvalidTable(format!(
                        "grid does not cover [0, {lin}] x [0, {lout}]"
                    )));
                }
                for (i, row) in t.values.iter().enumerate() {
                    for j in 0..row.len() {
                        if j > 0 && row[j] < row[j - 1] {
                            return Err(CostError::NotMonotone {
                                axis: "in n_q",
                                n_p: t.input_points[i],
                                n_q: t.output_points[j],
                            });
                        }
                        if i > 0 && row[j] < t.values[i - 1][j] {
                            return Err(CostError::NotMonotone {
                                axis: "in n_p",
                                n_p: t.input_points[i],
                                n_q: t.output_points[j],
                            });
                        }
                    }
                }
            }
        }
        let origin = self.h(0, 0);
        if origin < 0.0 {
            return Err(CostError::NegativeOrigin(origin));
        }
        Ok(())
    }

    /// `h(n_p, n_q)` for token counts within the request limits.
    pub fn cost_of(&self, limits: &SystemLimits, n_p: u32, n_q: u32) -> Result<f64, CostError> {
        if n_p > limits.max_input || n_q > limits.max_output {
            return Err(CostError::OutOfRange {
                n_p,
                n_q,
                max_input: limits.max_input,
                max_output: limits.max_output,
            });
        }
        Ok(self.h(n_p, n_q))
    }

    /// Service charged when a request with `input_len` prompt tokens joins
    /// the running batch.
    pub fn admission_cost(&self, input_len: u32) -> f64 {
        match self {
            CostModel::WeightedTokens { input_weight, .. } => input_weight * f64::from(input_len),
            _ => self.h(input_len, 0) - self.h(0, 0),
        }
    }

    /// Service of the `n_q`-th output token of a request with `n_p` input
    /// tokens.
    pub fn marginal_output_cost(&self, n_p: u32, n_q: u32) -> Result<f64, CostError> {
        if n_q == 0 {
            return Err(CostError::ZeroOutputIndex);
        }
        Ok(self.marginal_unchecked(n_p, n_q))
    }

    pub(crate) fn marginal_unchecked(&self, n_p: u32, n_q: u32) -> f64 {
        match self {
            CostModel::WeightedTokens { output_weight, .. } => *output_weight,
            _ => self.h(n_p, n_q) - self.h(n_p, n_q - 1),
        }
    }

    /// Service of output tokens `from+1 ..= to` of one request.
    pub fn output_span_cost(&self, n_p: u32, from: u32, to: u32) -> f64 {
        match self {
            CostModel::WeightedTokens { output_weight, .. } => {
                output_weight * (f64::from(to) - f64::from(from))
            }
            _ => self.h(n_p, to) - self.h(n_p, from),
        }
    }

    /// Total service attributed to a finished request.
    pub fn request_cost(&self, n_p: u32, n_q: u32) -> f64 {
        self.admission_cost(n_p) + self.output_span_cost(n_p, 0, n_q)
    }

    /// Upper bound on the spread of queued clients' counters.
    ///
    /// Token weights give `max(w_p * L_input, w_q * M)`. Other cost functions
    /// use the largest per-token output marginal `m` and take
    /// `max(adm(L_input), max_n adm(n) + m * (M - n))`, which covers an
    /// admission followed by a full batch of output tokens. It is an
    /// over-approximation, not a tight bound.
    pub fn fairness_bound(&self, limits: &SystemLimits) -> FairnessBound {
        let lin = limits.max_input;
        let m = f64::from(limits.pool_tokens);
        let value = match self {
            CostModel::WeightedTokens {
                input_weight,
                output_weight,
            } => (input_weight * f64::from(lin)).max(output_weight * m),
            _ => {
                let worst_marginal = self.max_output_marginal(limits);
                let mut bound = self.admission_cost(lin).max(worst_marginal * m);
                for n in 1..=lin.min(limits.pool_tokens) {
                    let tail = worst_marginal * (m - f64::from(n));
                    bound = bound.max(self.admission_cost(n) + tail);
                }
                bound
            }
        };
        FairnessBound { value }
    }

    /// Largest `h(n_p, n_q) - h(n_p, n_q - 1)` over the request domain.
    pub fn max_output_marginal(&self, limits: &SystemLimits) -> f64 {
        let (lin, lout) = (limits.max_input, limits.max_output);
        match self {
            CostModel::WeightedTokens { output_weight, .. } => *output_weight,
            // Affine in both arguments: the maximum sits on a corner.
            CostModel::Profiled(_) => [(0, 1), (0, lout), (lin, 1), (lin, lout)]
                .into_iter()
                .map(|(p, q)| self.marginal_unchecked(p, q))
                .fold(0.0, f64::max),
            CostModel::Custom(t) => t.max_output_slope(),
        }
    }
}

/// Bound `U` on `max c_i - min c_i` over queued clients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessBound {
    pub value: f64,
}

impl FairnessBound {
    /// Bound on the service gap of two clients backlogged over an interval.
    pub fn backlogged_gap(&self) -> f64 {
        2.0 * self.value
    }

    /// Slack in the guarantee that a backlogged client is not served less
    /// than any other client.
    pub fn no_punish_slack(&self) -> f64 {
        4.0 * self.value
    }

    /// Bound for counters normalized by client weights.
    pub fn for_weights(&self, weights: &[f64]) -> FairnessBound {
        let min = weights.iter().copied().fold(f64::INFINITY, f64::min);
        if min.is_finite() && min > 0.0 {
            FairnessBound {
                value: self.value / min,
            }
        } else {
            *self
        }
    }
}
