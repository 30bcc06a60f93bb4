//! Summary statistics and time series of one run.
//!
//! Rates are taken over windows `[t - T, t + T]` clipped to the run, in
//! service units per second. At each sample time the service difference is
//! `D(t) = sum over clients i other than the best-served one of
//! min(s_max - s_i, |r_i - s_i|)`, where `s` is the received service rate
//! and `r` the requested one: a client that got everything it asked for
//! contributes nothing.

use super::ledger::ServiceLedger;
use super::monitors::Verdict;
use crate::types::{ClientId, Request};
use serde::{Deserialize, Serialize};
use std::io::{self, Write};
use std::path::Path;

/// `min(s_high - s_low, |r_low - s_low|)`.
pub fn service_difference(s_low: f64, s_high: f64, r_low: f64) -> f64 {
    (s_high - s_low).min((r_low - s_low).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    /// Half-width `T` of the rate windows, seconds.
    pub window_half_width: f64,
    /// Spacing of the sample times, seconds.
    pub sample_interval: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            window_half_width: 30.0,
            sample_interval: 5.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClientSeries {
    pub client: ClientId,
    pub service_rate: Vec<f64>,
    pub accumulated_service: Vec<f64>,
    /// Mean first-token latency of requests sent in the window; `NaN` when
    /// none of them got a token.
    pub response_time: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClientSummary {
    pub client: ClientId,
    pub total_service: f64,
    pub requests: usize,
    pub finished: usize,
    pub rejected: usize,
    pub mean_response_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub scheduler: String,
    pub max_diff: f64,
    pub avg_diff: f64,
    pub diff_var: f64,
    /// Input plus output tokens processed per second of simulated time.
    pub throughput: f64,
    /// `max_t max_{i,j} |W_i(0,t) - W_j(0,t)|`.
    pub max_accumulated_diff: f64,
    pub end_time: f64,
    pub clients: Vec<ClientSummary>,
    pub times: Vec<f64>,
    pub accumulated_difference: Vec<f64>,
    pub series: Vec<ClientSeries>,
    pub verdicts: Vec<Verdict>,
}

pub const SUMMARY_HEADER: &str = "scheduler,max_diff,avg_diff,diff_var,throughput,max_accumulated_diff";

impl FairnessReport {
    /// Builds the report from a ledger and the final request states.
    pub fn build(scheduler: &str, ledger: &ServiceLedger, requests: &[Request], config: &ReportConfig) -> Self {
        let end = ledger.end_time();
        let n = ledger.num_clients();
        let clients: Vec<ClientId> = (0..n).map(|c| ClientId(c as u32)).collect();
        let mut report = FairnessReport {
            scheduler: scheduler.into(),
            end_time: end,
            throughput: if end > 0.0 { ledger.tokens_processed() as f64 / end } else { 0.0 },
            max_accumulated_diff: ledger.max_accumulated_difference().0,
            series: clients
                .iter()
                .map(|&client| ClientSeries {
                    client,
                    ..Default::default()
                })
                .collect(),
            ..Default::default()
        };
        for &c in &clients {
            let mine: Vec<&Request> = requests.iter().filter(|r| r.client == c).collect();
            let latencies: Vec<f64> = mine.iter().filter_map(|r| first_token_latency(r)).collect();
            report.clients.push(ClientSummary {
                client: c,
                total_service: ledger.total_service(c),
                requests: mine.len(),
                finished: mine.iter().filter(|r| r.finish_time.is_some()).count(),
                rejected: mine
                    .iter()
                    .filter(|r| r.state == crate::types::RequestState::Rejected)
                    .count(),
                mean_response_time: mean(&latencies),
            });
        }
        if end <= 0.0 || n == 0 {
            return report;
        }

        // Requests by client, sorted by arrival, for windowed latencies.
        let mut by_client: Vec<Vec<(f64, Option<f64>)>> = vec![Vec::new(); n];
        for r in requests {
            if let Some(v) = by_client.get_mut(r.client.index()) {
                v.push((r.arrival_time, first_token_latency(r)));
            }
        }
        for v in &mut by_client {
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
        }

        let half = config.window_half_width;
        let step = config.sample_interval.max(1e-9);
        let samples = (end / step).floor() as usize;
        let mut diffs = Vec::with_capacity(samples + 1);
        for k in 0..=samples {
            let t = k as f64 * step;
            let (lo, hi) = ((t - half).max(0.0), (t + half).min(end));
            let width = hi - lo;
            report.times.push(t);
            let mut rates = Vec::with_capacity(n);
            let mut asked = Vec::with_capacity(n);
            let mut acc_lo = f64::INFINITY;
            let mut acc_hi = f64::NEG_INFINITY;
            for (i, &c) in clients.iter().enumerate() {
                let s = if width > 0.0 { ledger.service_in_window(c, lo, hi) / width } else { 0.0 };
                let r = if width > 0.0 { ledger.requested_in_window(c, lo, hi) / width } else { 0.0 };
                rates.push(s);
                asked.push(r);
                let acc = ledger.service_until(c, t);
                acc_lo = acc_lo.min(acc);
                acc_hi = acc_hi.max(acc);
                let series = &mut report.series[i];
                series.service_rate.push(s);
                series.accumulated_service.push(acc);
                let window: Vec<f64> = by_client[i]
                    .iter()
                    .filter(|(a, _)| *a >= lo && *a <= hi)
                    .filter_map(|(_, l)| *l)
                    .collect();
                series.response_time.push(mean(&window));
            }
            report.accumulated_difference.push(acc_hi - acc_lo);
            let top = (0..n).fold(0, |best, i| if rates[i] > rates[best] { i } else { best });
            let d: f64 = (0..n)
                .filter(|&i| i != top)
                .map(|i| service_difference(rates[i], rates[top], asked[i]))
                .sum();
            diffs.push(d);
        }
        report.max_diff = diffs.iter().copied().fold(0.0, f64::max);
        report.avg_diff = mean(&diffs);
        report.diff_var = diffs.iter().map(|d| (d - report.avg_diff).powi(2)).sum::<f64>() / diffs.len() as f64;
        report
    }

    pub fn summary_row(&self) -> String {
        // Adding 0.0 turns the -0 of an empty max or mean into 0.
        let n = |x: f64| x + 0.0;
        format!(
            "{},{},{},{},{},{}",
            self.scheduler,
            n(self.max_diff),
            n(self.avg_diff),
            n(self.diff_var),
            n(self.throughput),
            n(self.max_accumulated_diff)
        )
    }

    pub fn write_summary<W: Write>(reports: &[&FairnessReport], mut w: W) -> io::Result<()> {
        writeln!(w, "{SUMMARY_HEADER}")?;
        for r in reports {
            writeln!(w, "{}", r.summary_row())?;
        }
        Ok(())
    }

    /// Writes `service_rate_<client>.csv`, `accumulated_service_<client>.csv`,
    /// `response_time_<client>.csv` and `accumulated_difference.csv`, each
    /// with a `time,value` header, into `dir`.
    pub fn write_series(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let write = |name: String, values: &[f64]| -> io::Result<()> {
            let mut w = io::BufWriter::new(std::fs::File::create(dir.join(name))?);
            writeln!(w, "time,value")?;
            for (t, v) in self.times.iter().zip(values) {
                writeln!(w, "{t},{v}")?;
            }
            w.flush()
        };
        for s in &self.series {
            write(format!("service_rate_{}.csv", s.client), &s.service_rate)?;
            write(format!("accumulated_service_{}.csv", s.client), &s.accumulated_service)?;
            write(format!("response_time_{}.csv", s.client), &s.response_time)?;
        }
        write("accumulated_difference.csv".into(), &self.accumulated_difference)
    }

    pub fn write_verdicts<W: Write>(&self, w: W) -> io::Result<()> {
        serde_json::to_writer_pretty(w, &self.verdicts).map_err(io::Error::other)
    }
}

fn first_token_latency(r: &Request) -> Option<f64> {
    r.first_token_time.map(|t| t - r.arrival_time)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn service_difference_examples() {
        assert_eq!(service_difference(100.0, 300.0, 100.0), 0.0);
        assert_eq!(service_difference(100.0, 300.0, 400.0), 200.0);
        assert_eq!(service_difference(50.0, 50.0, 999.0), 0.0);
    }

    #[test]
    fn empty_log_gives_empty_report() {
        let log = crate::engine::run(
            &crate::engine::EngineConfig::default(),
            &mut crate::schedulers::Fcfs::new(),
            Vec::new(),
        )
        .unwrap()
        .log;
        let ledger = ServiceLedger::new(&log, &crate::cost::CostModel::default());
        let r = FairnessReport::build("fcfs", &ledger, &[], &ReportConfig::default());
        assert!(r.times.is_empty() && r.clients.is_empty());
        assert_eq!(r.throughput, 0.0);
    }
}
