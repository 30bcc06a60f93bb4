use crate::types::{ClientId, Request};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::fmt;

/// Output-length prediction strategies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorKind {
    /// The true output length.
    Oracle,
    /// Uniform in `[(1-f)·true, (1+f)·true]`.
    Noisy { fraction: f64 },
    /// Mean of the client's last `window` finished requests.
    MovingAverage { window: usize },
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictorKind::Oracle => write!(f, "oracle"),
            PredictorKind::Noisy { fraction } => write!(f, "noisy({fraction})"),
            PredictorKind::MovingAverage { window } => write!(f, "moving_avg({window})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Predictor {
    kind: PredictorKind,
    max_output: u32,
    rng: ChaCha8Rng,
    history: Vec<VecDeque<u32>>,
    finished_sum: u64,
    finished_count: u64,
}

impl Predictor {
    pub fn new(kind: PredictorKind, max_output: u32, seed: u64) -> Self {
        Self {
            kind,
            max_output: max_output.max(1),
            rng: ChaCha8Rng::seed_from_u64(seed),
            history: Vec::new(),
            finished_sum: 0,
            finished_count: 0,
        }
    }

    pub fn kind(&self) -> PredictorKind {
        self.kind
    }

    fn clamp(&self, v: f64) -> u32 {
        v.round().clamp(1.0, f64::from(self.max_output)) as u32
    }

    /// Predicted output length of `request`, in `[1, max_output]`.
    pub fn predict(&mut self, request: &Request) -> u32 {
        match self.kind {
            PredictorKind::Oracle => request.true_output_len.clamp(1, self.max_output),
            PredictorKind::Noisy { fraction } => {
                let t = f64::from(request.true_output_len);
                let (lo, hi) = ((1.0 - fraction) * t, (1.0 + fraction) * t);
                let v = if hi > lo { self.rng.random_range(lo..=hi) } else { t };
                self.clamp(v)
            }
            PredictorKind::MovingAverage { .. } => {
                let recent = self.history.get(request.client.index()).filter(|h| !h.is_empty());
                let mean = match recent {
                    Some(h) => h.iter().map(|&v| f64::from(v)).sum::<f64>() / h.len() as f64,
                    None if self.finished_count > 0 => self.finished_sum as f64 / self.finished_count as f64,
                    None => f64::from(self.max_output) / 2.0,
                };
                self.clamp(mean)
            }
        }
    }

    /// Records the actual output length of a finished request.
    pub fn observe(&mut self, client: ClientId, actual: u32) {
        let PredictorKind::MovingAverage { window } = self.kind else {
            return;
        };
        let c = client.index();
        if self.history.len() <= c {
            self.history.resize_with(c + 1, VecDeque::new);
        }
        let h = &mut self.history[c];
        h.push_back(actual);
        while h.len() > window.max(1) {
            h.pop_front();
        }
        self.finished_sum += u64::from(actual);
        self.finished_count += 1;
    }
}
