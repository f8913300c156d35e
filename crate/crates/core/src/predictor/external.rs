//! Bridge to an out-of-process predictor.
//!
//! Live mode spawns a command and exchanges one JSON line per request on its
//! stdin/stdout. Batch mode replays a JSON-lines file of responses keyed by
//! trace id and decision timestamp.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{PredictError, PredictionRequest, PredictionResult, Predictor};
use crate::trace::{annotate_shifts, NetworkTrace};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(1);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireSample {
    pub t: u64,
    pub wall_clock: String,
    pub throughput: f64,
    pub retransmits: u64,
    pub cwnd: u64,
    pub srtt: f64,
    pub rtt_var: f64,
    pub shift: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub m: usize,
    pub n: usize,
    pub p: usize,
    pub delta: f64,
    pub samples: Vec<WireSample>,
}

impl From<&PredictionRequest> for WireRequest {
    fn from(req: &PredictionRequest) -> Self {
        Self {
            m: req.m,
            n: req.n,
            p: req.p,
            delta: req.delta,
            samples: req
                .samples
                .iter()
                .map(|s| WireSample {
                    t: s.timestamp,
                    wall_clock: s.wall_clock.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                    throughput: s.throughput,
                    retransmits: s.retransmits,
                    cwnd: s.cwnd,
                    srtt: s.srtt,
                    rtt_var: s.rtt_var,
                    shift: u8::from(s.shift),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub throughputs: Vec<f64>,
    pub shifts: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<f64>>,
}

impl WireResponse {
    pub fn into_result(self, n: usize) -> Result<PredictionResult, PredictError> {
        if let Some(v) = self.shifts.iter().find(|&&s| s > 1) {
            return Err(PredictError::Protocol(format!("shift indicator {v} is not 0 or 1")));
        }
        let result = PredictionResult {
            throughputs: self.throughputs,
            shifts: self.shifts.iter().map(|&s| s == 1).collect(),
            shift_probabilities: self.probabilities,
        };
        result.validate(n)?;
        Ok(result)
    }
}

impl From<&PredictionResult> for WireResponse {
    fn from(r: &PredictionResult) -> Self {
        Self {
            throughputs: r.throughputs.clone(),
            shifts: r.shifts.iter().map(|&s| u8::from(s)).collect(),
            probabilities: r.shift_probabilities.clone(),
        }
    }
}

/// One line of a batch prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLine {
    pub trace_id: String,
    /// Timestamp of the newest lookback sample.
    pub t: u64,
    #[serde(flatten)]
    pub response: WireResponse,
}

fn parse_response(line: &str, n: usize) -> Result<PredictionResult, PredictError> {
    let value: serde_json::Value = serde_json::from_str(line)
        .map_err(|e| PredictError::Protocol(format!("malformed response: {e}")))?;
    if let Some(err) = value.get("error") {
        return Err(PredictError::Protocol(format!("predictor reported error: {err}")));
    }
    let resp: WireResponse = serde_json::from_value(value)
        .map_err(|e| PredictError::Protocol(format!("malformed response: {e}")))?;
    resp.into_result(n)
}

struct Running {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

/// Live predictor process. One request is in flight at a time; a timed-out
/// or broken process is killed and respawned on the next request.
pub struct PipePredictor {
    command: Vec<String>,
    timeout: Duration,
    running: Option<Running>,
}

impl PipePredictor {
    pub fn new(command: Vec<String>, timeout: Duration) -> Result<Self, PredictError> {
        if command.is_empty() {
            return Err(PredictError::Unavailable("empty predictor command".into()));
        }
        Ok(Self {
            command,
            timeout,
            running: None,
        })
    }

    fn spawn(&self) -> Result<Running, PredictError> {
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| PredictError::Unavailable(format!("{}: {e}", self.command[0])))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Running {
            child,
            stdin,
            lines: rx,
        })
    }

    fn shutdown(&mut self) {
        if let Some(mut r) = self.running.take() {
            let _ = r.child.kill();
            let _ = r.child.wait();
        }
    }

    fn exchange(&mut self, line: &str) -> Result<String, PredictError> {
        if self.running.is_none() {
            self.running = Some(self.spawn()?);
        }
        let running = self.running.as_mut().expect("spawned above");
        let sent = running
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| running.stdin.write_all(b"\n"))
            .and_then(|_| running.stdin.flush());
        if let Err(e) = sent {
            self.shutdown();
            return Err(PredictError::Unavailable(format!("write failed: {e}")));
        }
        match running.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => Ok(reply),
            Ok(Err(e)) => {
                self.shutdown();
                Err(PredictError::Unavailable(format!("read failed: {e}")))
            }
            Err(RecvTimeoutError::Timeout) => {
                self.shutdown();
                Err(PredictError::Timeout(self.timeout))
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.shutdown();
                Err(PredictError::Unavailable("predictor exited".into()))
            }
        }
    }
}

impl Drop for PipePredictor {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl Predictor for PipePredictor {
    fn name(&self) -> String {
        format!("external({})", self.command.join(" "))
    }

    fn predict(&mut self, req: &PredictionRequest) -> Result<PredictionResult, PredictError> {
        req.validate()?;
        let line = serde_json::to_string(&WireRequest::from(req))
            .map_err(|e| PredictError::InvalidRequest(e.to_string()))?;
        let reply = self.exchange(&line)?;
        parse_response(&reply, req.n)
    }
}

/// Replays precomputed responses.
#[derive(Debug, Clone)]
pub struct PredictionFile {
    name: String,
    entries: HashMap<(String, u64), WireResponse>,
}

impl PredictionFile {
    pub fn load(path: &Path) -> Result<Self, PredictError> {
        let file = File::open(path)
            .map_err(|e| PredictError::Unavailable(format!("{}: {e}", path.display())))?;
        let mut entries = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| PredictError::Unavailable(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: BatchLine = serde_json::from_str(&line).map_err(|e| {
                PredictError::Protocol(format!("{} line {}: {e}", path.display(), i + 1))
            })?;
            entries.insert((parsed.trace_id, parsed.t), parsed.response);
        }
        Ok(Self {
            name: format!("file({})", path.display()),
            entries,
        })
    }

    pub fn from_lines(name: impl Into<String>, lines: Vec<BatchLine>) -> Self {
        Self {
            name: name.into(),
            entries: lines
                .into_iter()
                .map(|l| ((l.trace_id, l.t), l.response))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Predictor for PredictionFile {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn predict(&mut self, req: &PredictionRequest) -> Result<PredictionResult, PredictError> {
        req.validate()?;
        let trace_id = req.trace_id.clone().unwrap_or_default();
        let t = req.decision_time().unwrap_or_default();
        let resp = self
            .entries
            .get(&(trace_id.clone(), t))
            .ok_or(PredictError::Coverage { trace_id, t })?;
        let mut result = resp.clone().into_result(resp.throughputs.len())?;
        // A file written for a longer horizon serves any shorter one.
        if result.throughputs.len() < req.n {
            return Err(PredictError::Protocol(format!(
                "file entry has {} steps, request needs {}",
                result.throughputs.len(),
                req.n
            )));
        }
        result.throughputs.truncate(req.n);
        result.shifts.truncate(req.n);
        if let Some(p) = result.shift_probabilities.as_mut() {
            p.truncate(req.n);
        }
        Ok(result)
    }
}

/// Perfect-foresight responses for every decision timestamp of `trace` that
/// has `n` future samples.
pub fn truth_prediction_lines(trace: &NetworkTrace, n: usize) -> Vec<BatchLine> {
    let throughputs = trace.throughputs();
    let shifts = annotate_shifts(&throughputs, trace.delta);
    (0..trace.len().saturating_sub(n))
        .map(|t| BatchLine {
            trace_id: trace.trace_id.clone(),
            t: trace.samples[t].timestamp,
            response: WireResponse {
                throughputs: throughputs[t + 1..=t + n].to_vec(),
                shifts: shifts[t + 1..=t + n].iter().map(|&s| u8::from(s)).collect(),
                probabilities: None,
            },
        })
        .collect()
}

pub fn write_prediction_file(path: &Path, lines: &[BatchLine]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for l in lines {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}
