//! Event log of one simulation and its line-delimited JSON encoding.
//!
//! The file starts with one header object (`"format": "fairserve-events"`)
//! followed by one event object per line. Every event carries `time`
//! (simulated seconds) and an `event` tag:
//!
//! | event              | fields                                                        |
//! |--------------------|---------------------------------------------------------------|
//! | `arrival`          | `request_id`, `client`, `arrival_time`, `input_len`, `output_len` |
//! | `rejected`         | `request_id`, `client`, `reason` (`too_large` / `rate_limited`) |
//! | `dispatch`         | `request_id`, `client`, `batch_id`                            |
//! | `prefill_done`     | `batch_id`                                                    |
//! | `tokens_decoded`   | `request_ids` (one token each)                                |
//! | `finish`           | `request_id`, `client`                                        |
//! | `counter_snapshot` | `counters` (indexed by client), `queued` (client ids)         |

use super::pool::ReservationPolicy;
use crate::types::{ClientId, SystemLimits};
use serde::{Deserialize, Serialize};
use std::io::{self, BufRead, Write};

pub const LOG_FORMAT: &str = "fairserve-events";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    TooLarge,
    RateLimited,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    Arrival {
        request_id: u64,
        client: ClientId,
        arrival_time: f64,
        input_len: u32,
        output_len: u32,
    },
    Rejected {
        request_id: u64,
        client: ClientId,
        reason: RejectReason,
    },
    Dispatch {
        request_id: u64,
        client: ClientId,
        batch_id: u64,
    },
    PrefillDone {
        batch_id: u64,
    },
    TokensDecoded {
        request_ids: Vec<u64>,
    },
    Finish {
        request_id: u64,
        client: ClientId,
    },
    CounterSnapshot {
        counters: Vec<f64>,
        queued: Vec<ClientId>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub version: u32,
    pub scheduler: String,
    pub limits: SystemLimits,
    pub reservation: ReservationPolicy,
    pub admit_every_k_steps: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub header: LogHeader,
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn new(header: LogHeader) -> Self {
        Self {
            header,
            events: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, time: f64, kind: EventKind) {
        debug_assert!(self.events.last().is_none_or(|e| e.time <= time));
        self.events.push(Event { time, kind });
    }

    pub fn last_time(&self) -> f64 {
        self.events.last().map_or(0.0, |e| e.time)
    }

    pub fn has_counter_snapshots(&self) -> bool {
        self.events
            .iter()
            .any(|e| matches!(e.kind, EventKind::CounterSnapshot { .. }))
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("serde_json emits utf-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> io::Result<Self> {
        let bad = |line: usize, e: &dyn std::fmt::Display| {
            io::Error::new(io::ErrorKind::InvalidData, format!("line {line}: {e}"))
        };
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| bad(1, &"missing header"))??;
        let header: LogHeader = serde_json::from_str(&first).map_err(|e| bad(1, &e))?;
        if header.format != LOG_FORMAT || header.version != LOG_VERSION {
            return Err(bad(1, &format!("unsupported log {} v{}", header.format, header.version)));
        }
        let mut log = EventLog::new(header);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            log.events
                .push(serde_json::from_str(&line).map_err(|e| bad(i + 2, &e))?);
        }
        Ok(log)
    }
}
