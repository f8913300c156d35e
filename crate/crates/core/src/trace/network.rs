//! 1 Hz uplink observations and the CSV trace format.
//!
//! TCP variables (`retransmits`, `cwnd`, `srtt`, `rtt_var`) are treated as
//! per-interval snapshots taken at the sample's timestamp, not cumulative
//! counters.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::TraceError;

/// Column order of the network-trace CSV. A trailing `shift` column is
/// accepted on input and always written on output.
pub const CSV_HEADER: [&str; 7] = [
    "timestamp",
    "wall_clock",
    "throughput_mbps",
    "retransmits",
    "cwnd_bytes",
    "srtt_ms",
    "rtt_var_ms",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSample {
    /// Seconds since trace start.
    pub timestamp: u64,
    pub wall_clock: DateTime<Utc>,
    /// Uplink throughput in Mbps.
    pub throughput: f64,
    pub retransmits: u64,
    /// Sending congestion window in bytes.
    pub cwnd: u64,
    /// Smoothed RTT in milliseconds.
    pub srtt: f64,
    /// RTT variation in milliseconds.
    pub rtt_var: f64,
    pub shift: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTrace {
    pub trace_id: String,
    pub location_tag: String,
    pub samples: Vec<NetworkSample>,
    /// Shift threshold in Mbps used to annotate `samples[..].shift`.
    pub delta: f64,
}

/// Marks step `t` as a shift when `|b_t - b_{t-1}| > delta`. The first step
/// has no predecessor and is never a shift.
pub fn annotate_shifts(throughputs: &[f64], delta: f64) -> Vec<bool> {
    let mut shifts = Vec::with_capacity(throughputs.len());
    if let Some(&first) = throughputs.first() {
        shifts.push(false);
        let mut prev = first;
        for &b in &throughputs[1..] {
            shifts.push((b - prev).abs() > delta);
            prev = b;
        }
    }
    shifts
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    timestamp: u64,
    wall_clock: DateTime<Utc>,
    throughput_mbps: f64,
    retransmits: u64,
    cwnd_bytes: u64,
    srtt_ms: f64,
    rtt_var_ms: f64,
}

impl NetworkTrace {
    /// Builds a trace from raw samples, validating ordering and recomputing
    /// the shift column from `delta`.
    pub fn new(
        trace_id: impl Into<String>,
        location_tag: impl Into<String>,
        mut samples: Vec<NetworkSample>,
        delta: f64,
    ) -> Result<Self, TraceError> {
        if !(delta > 0.0) {
            return Err(TraceError::Validation(format!(
                "shift threshold must be positive, got {delta}"
            )));
        }
        for (i, w) in samples.windows(2).enumerate() {
            if w[1].timestamp != w[0].timestamp + 1 {
                return Err(TraceError::Validation(format!(
                    "timestamps must increase by 1 s: sample {} has {} after {}",
                    i + 1,
                    w[1].timestamp,
                    w[0].timestamp
                )));
            }
        }
        if let Some(s) = samples.iter().find(|s| !(s.throughput >= 0.0)) {
            return Err(TraceError::Validation(format!(
                "negative or NaN throughput {} at t={}",
                s.throughput, s.timestamp
            )));
        }
        let throughputs: Vec<f64> = samples.iter().map(|s| s.throughput).collect();
        for (s, shift) in samples.iter_mut().zip(annotate_shifts(&throughputs, delta)) {
            s.shift = shift;
        }
        Ok(Self {
            trace_id: trace_id.into(),
            location_tag: location_tag.into(),
            samples,
            delta,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration in seconds (one second per sample).
    pub fn duration(&self) -> u64 {
        self.samples.len() as u64
    }

    pub fn throughputs(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.throughput).collect()
    }

    /// Checks that the trace is long enough for a lookback of `m` and a
    /// lookahead of `n` samples.
    pub fn ensure_covers(&self, m: usize, n: usize) -> Result<(), TraceError> {
        if self.samples.len() < m + n {
            return Err(TraceError::Validation(format!(
                "trace {} has {} samples, needs at least {} (m={m}, n={n})",
                self.trace_id,
                self.samples.len(),
                m + n
            )));
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(
        reader: R,
        trace_id: impl Into<String>,
        location_tag: impl Into<String>,
        delta: f64,
    ) -> Result<Self, TraceError> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = CSV_HEADER.iter().copied();
        let matches = headers.len() >= CSV_HEADER.len()
            && headers.iter().zip(expected).all(|(a, b)| a.trim() == b)
            && (headers.len() == CSV_HEADER.len()
                || (headers.len() == CSV_HEADER.len() + 1 && &headers[7] == "shift"));
        if !matches {
            return Err(TraceError::Validation(format!(
                "unexpected CSV header {:?}, expected {:?} (+ optional shift)",
                headers.iter().collect::<Vec<_>>(),
                CSV_HEADER
            )));
        }
        let mut samples = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            // header is line 1
            let line = i + 2;
            let record = record.map_err(|e| TraceError::Parse {
                line,
                message: e.to_string(),
            })?;
            let mut trimmed = record.clone();
            trimmed.truncate(CSV_HEADER.len());
            let row: CsvRow =
                trimmed
                    .deserialize(Some(&headers_prefix()))
                    .map_err(|e| TraceError::Parse {
                        line,
                        message: e.to_string(),
                    })?;
            samples.push(NetworkSample {
                timestamp: row.timestamp,
                wall_clock: row.wall_clock,
                throughput: row.throughput_mbps,
                retransmits: row.retransmits,
                cwnd: row.cwnd_bytes,
                srtt: row.srtt_ms,
                rtt_var: row.rtt_var_ms,
                shift: false,
            });
        }
        if samples.len() < 2 {
            return Err(TraceError::Validation(format!(
                "trace needs at least 2 samples, found {}",
                samples.len()
            )));
        }
        Self::new(trace_id, location_tag, samples, delta)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TraceError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = CSV_HEADER.to_vec();
        header.push("shift");
        wtr.write_record(&header)?;
        for s in &self.samples {
            wtr.write_record([
                s.timestamp.to_string(),
                s.wall_clock.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                format_f64(s.throughput),
                s.retransmits.to_string(),
                s.cwnd.to_string(),
                format_f64(s.srtt),
                format_f64(s.rtt_var),
                u8::from(s.shift).to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), TraceError> {
        let file = File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn headers_prefix() -> csv::StringRecord {
    csv::StringRecord::from(CSV_HEADER.to_vec())
}

/// Shortest representation that parses back to the same value.
fn format_f64(v: f64) -> String {
    format!("{v}")
}

/// Loads a CSV network trace. The trace id is the file stem and the location
/// tag is the parent directory name. Any stored shift column is ignored and
/// recomputed from `delta`.
pub fn load_network_trace(path: &Path, delta: f64) -> Result<NetworkTrace, TraceError> {
    let file = File::open(path).map_err(|e| TraceError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let trace_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let location_tag = path
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    NetworkTrace::read_csv(std::io::BufReader::new(file), trace_id, location_tag, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn csv_with(throughputs: &[f64]) -> String {
        let mut out = CSV_HEADER.join(",");
        out.push('\n');
        for (i, b) in throughputs.iter().enumerate() {
            out.push_str(&format!(
                "{i},2024-03-01T12:00:{:02}Z,{b},0,65536,40.5,3.2\n",
                i % 60
            ));
        }
        out
    }

    #[test]
    fn shifts_follow_absolute_difference() {
        assert_eq!(annotate_shifts(&[5.0, 8.0], 2.5), vec![false, true]);
        assert_eq!(annotate_shifts(&[8.0, 5.0], 2.5), vec![false, true]);
        assert_eq!(annotate_shifts(&[5.0, 7.5], 2.5), vec![false, false]);
        assert!(annotate_shifts(&[], 2.5).is_empty());
    }

    #[test]
    fn loader_recomputes_shifts() {
        let t = NetworkTrace::read_csv(csv_with(&[5.0, 8.0, 7.0]).as_bytes(), "a", "x", 2.5)
            .unwrap();
        let shifts: Vec<bool> = t.samples.iter().map(|s| s.shift).collect();
        assert_eq!(shifts, vec![false, true, false]);

        let t = NetworkTrace::read_csv(csv_with(&[4.0, 4.0]).as_bytes(), "a", "x", 2.5).unwrap();
        assert!(t.samples.iter().all(|s| !s.shift));
    }

    #[test]
    fn stored_shift_column_is_overridden() {
        let text = "timestamp,wall_clock,throughput_mbps,retransmits,cwnd_bytes,srtt_ms,rtt_var_ms,shift\n\
                    0,2024-03-01T12:00:00Z,5,0,1,1,1,1\n\
                    1,2024-03-01T12:00:01Z,5.5,0,1,1,1,1\n";
        let t = NetworkTrace::read_csv(text.as_bytes(), "a", "x", 2.5).unwrap();
        assert!(t.samples.iter().all(|s| !s.shift));
    }

    #[test]
    fn ten_minute_trace() {
        let tp: Vec<f64> = (0..600).map(|i| (i % 7) as f64).collect();
        let t = NetworkTrace::read_csv(csv_with(&tp).as_bytes(), "a", "x", 2.5).unwrap();
        assert_eq!(t.duration(), 600);
    }

    #[test]
    fn malformed_row_reports_line() {
        let mut text = csv_with(&[1.0, 2.0, 3.0]);
        text.push_str("3,2024-03-01T12:00:03Z,not-a-number,0,1,1,1\n");
        match NetworkTrace::read_csv(text.as_bytes(), "a", "x", 2.5) {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_monotone_timestamps_rejected() {
        let text = "timestamp,wall_clock,throughput_mbps,retransmits,cwnd_bytes,srtt_ms,rtt_var_ms\n\
                    0,2024-03-01T12:00:00Z,5,0,1,1,1\n\
                    2,2024-03-01T12:00:02Z,5,0,1,1,1\n";
        assert!(matches!(
            NetworkTrace::read_csv(text.as_bytes(), "a", "x", 2.5),
            Err(TraceError::Validation(_))
        ));
    }

    #[test]
    fn too_short_and_bad_delta() {
        assert!(NetworkTrace::read_csv(csv_with(&[1.0]).as_bytes(), "a", "x", 2.5).is_err());
        assert!(NetworkTrace::read_csv(csv_with(&[1.0, 2.0]).as_bytes(), "a", "x", 0.0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let start = Utc.with_ymd_and_hms(2024, 5, 1, 8, 30, 0).unwrap();
        let samples = (0..5u64)
            .map(|i| NetworkSample {
                timestamp: i,
                wall_clock: start + chrono::Duration::seconds(i as i64),
                throughput: 3.0 + i as f64 * 1.37,
                retransmits: i * 2,
                cwnd: 10_000 + i,
                srtt: 45.125,
                rtt_var: 0.1 + i as f64,
                shift: false,
            })
            .collect();
        let trace = NetworkTrace::new("t1", "loc", samples, 1.0).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let back = NetworkTrace::read_csv(buf.as_slice(), "t1", "loc", 1.0).unwrap();
        assert_eq!(trace, back);
    }
}
