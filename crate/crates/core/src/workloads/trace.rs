//! Trace files: a version header followed by one comma-separated request
//! per line.
//!
//! ```text
//! # trace v1: request_id,client_id,arrival_time_s,input_len,output_len
//! 0,1,0.5,256,256
//! ```
//!
//! Arrival times are absolute seconds from the start of the trace. Blank
//! lines and further `#` lines are ignored.

use super::WorkloadError;
use crate::types::{ClientId, Request, SystemLimits};
use std::collections::HashSet;
use std::io::{self, Write};
use std::path::Path;

pub const TRACE_HEADER: &str = "# trace v1: request_id,client_id,arrival_time_s,input_len,output_len";

pub fn write_trace<W: Write>(requests: &[Request], mut w: W) -> io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in requests {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.request_id, r.client.0, r.arrival_time, r.input_len, r.true_output_len
        )?;
    }
    Ok(())
}

pub fn save_trace(requests: &[Request], path: &Path) -> Result<(), WorkloadError> {
    let io_err = |e: io::Error| WorkloadError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = io::BufWriter::new(file);
    write_trace(requests, &mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Parses trace text. `source` names the input in errors. With `limits`,
/// requests outside them are reported together.
pub fn parse_trace(
    text: &str,
    source: &str,
    limits: Option<&SystemLimits>,
) -> Result<Vec<Request>, WorkloadError> {
    let err = |line: usize, message: String| WorkloadError::Trace {
        path: source.into(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRACE_HEADER => {}
        Some((_, h)) => return Err(err(1, format!("expected header `{TRACE_HEADER}`, found `{h}`"))),
        None => return Err(err(1, "empty file".into())),
    }
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in lines {
        let n = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(err(n, format!("expected 5 fields, found {}", fields.len())));
        }
        let int = |idx: usize, what: &str| -> Result<u64, WorkloadError> {
            fields[idx]
                .parse::<u64>()
                .map_err(|_| err(n, format!("{what} `{}` is not a non-negative integer", fields[idx])))
        };
        let id = int(0, "request_id")?;
        let client = u32::try_from(int(1, "client_id")?).map_err(|_| err(n, "client_id too large".into()))?;
        let time: f64 = fields[2]
            .parse()
            .map_err(|_| err(n, format!("arrival_time_s `{}` is not a number", fields[2])))?;
        if !(time.is_finite() && time >= 0.0) {
            return Err(err(n, format!("arrival_time_s must be finite and >= 0, got {time}")));
        }
        let len = |idx: usize, what: &str| -> Result<u32, WorkloadError> {
            let v = int(idx, what)?;
            match u32::try_from(v) {
                Ok(v) if v >= 1 => Ok(v),
                _ => Err(err(n, format!("{what} must be in 1..=4294967295, got {v}"))),
            }
        };
        let input = len(3, "input_len")?;
        let output = len(4, "output_len")?;
        if !ids.insert(id) {
            return Err(err(n, format!("duplicate request_id {id}")));
        }
        out.push((n, Request::new(id, ClientId(client), time, input, output)));
    }
    if let Some(limits) = limits {
        let offenders: Vec<String> = out
            .iter()
            .filter(|(_, r)| r.check_limits(limits).is_err())
            .map(|(n, r)| format!("line {n} (request {})", r.request_id))
            .collect();
        if !offenders.is_empty() {
            return Err(WorkloadError::TraceLimits(offenders.join(", ")));
        }
    }
    // Stable: equal timestamps keep file order.
    out.sort_by(|a, b| a.1.arrival_time.total_cmp(&b.1.arrival_time));
    Ok(out.into_iter().map(|(_, r)| r).collect())
}

pub fn load_trace(path: &Path, limits: Option<&SystemLimits>) -> Result<Vec<Request>, WorkloadError> {
    let text = std::fs::read_to_string(path).map_err(|e| WorkloadError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_trace(&text, &path.display().to_string(), limits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workloads::{builtin, generate};

    #[test]
    fn three_lines_sorted() {
        let text = format!("{TRACE_HEADER}\n2,0,3.5,4,4\n0,1,0.25,1,9\n\n1,0,1,2,2\n");
        let r = parse_trace(&text, "t", None).unwrap();
        let ids: Vec<u64> = r.iter().map(|q| q.request_id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn ties_keep_file_order() {
        let text = format!("{TRACE_HEADER}\n5,0,1,1,1\n3,1,1,1,1\n");
        let r = parse_trace(&text, "t", None).unwrap();
        assert_eq!(r[0].request_id, 5);
    }

    #[test]
    fn negative_length_names_the_line() {
        let text = format!("{TRACE_HEADER}\n0,0,0,4,4\n1,0,1,-4,4\n");
        let e = parse_trace(&text, "t", None).unwrap_err();
        match e {
            WorkloadError::Trace { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("input_len"), "{message}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn header_and_limits() {
        assert!(parse_trace("0,0,0,1,1\n", "t", None).is_err());
        let text = format!("{TRACE_HEADER}\n0,0,0,4000,4\n1,0,1,4,4\n2,0,2,4,5000\n");
        let limits = SystemLimits::default();
        match parse_trace(&text, "t", Some(&limits)).unwrap_err() {
            WorkloadError::TraceLimits(m) => {
                assert!(m.contains("line 2") && m.contains("line 4") && !m.contains("line 3"), "{m}")
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn generated_trace_round_trips() {
        let mut spec = builtin("fig7_poisson_short_long").unwrap();
        spec.rng_seed = 11;
        let reqs = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        save_trace(&reqs, &path).unwrap();
        let back = load_trace(&path, Some(&spec.limits)).unwrap();
        assert_eq!(back, reqs);
    }
}
