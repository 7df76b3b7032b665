//! Line-delimited metric protocol spoken between benchmark processes and the
//! harness: one JSON object per line with keys `event`, `time`, `task`, `data`.
//!
//! Encoding is deterministic: top-level keys in that order, payload keys sorted.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::{self, Read};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Environment variable naming the metric channel given to a child process:
/// either an inherited file descriptor number or a filesystem path.
pub const METRICS_ENV: &str = "BENCHFORGE_METRICS_FD";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Config,
    Start,
    Phase,
    Rate,
    Loss,
    Gpudata,
    Progress,
    Success,
    Error,
    Stop,
    End,
}

impl EventKind {
    pub const ALL: [EventKind; 11] = [
        EventKind::Config,
        EventKind::Start,
        EventKind::Phase,
        EventKind::Rate,
        EventKind::Loss,
        EventKind::Gpudata,
        EventKind::Progress,
        EventKind::Success,
        EventKind::Error,
        EventKind::Stop,
        EventKind::End,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Config => "config",
            EventKind::Start => "start",
            EventKind::Phase => "phase",
            EventKind::Rate => "rate",
            EventKind::Loss => "loss",
            EventKind::Gpudata => "gpudata",
            EventKind::Progress => "progress",
            EventKind::Success => "success",
            EventKind::Error => "error",
            EventKind::Stop => "stop",
            EventKind::End => "end",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == name)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricEvent {
    pub event: EventKind,
    pub time: f64,
    pub task: String,
    pub data: Map<String, Value>,
}

/// Typed view of a `rate` payload.
#[derive(Debug, Clone, PartialEq)]
pub struct RatePayload {
    pub rate: f64,
    pub units: String,
    pub batch: u64,
    /// Producer-measured duration; when absent it is recovered as `batch / rate`.
    pub elapsed: Option<f64>,
    /// Producer timestamp of the batch end.
    pub end: Option<f64>,
    pub warmup: bool,
}

impl MetricEvent {
    pub fn new(event: EventKind, time: f64, task: impl Into<String>) -> Self {
        Self {
            event,
            time,
            task: task.into(),
            data: Map::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.data.insert(key.to_string(), value.into());
        self
    }

    /// A `rate` event for `work` units processed in `elapsed` seconds.
    pub fn rate(time: f64, task: impl Into<String>, work: u64, elapsed: f64, units: &str) -> Self {
        Self::new(EventKind::Rate, time, task)
            .with("rate", work as f64 / elapsed)
            .with("units", units)
            .with("batch", work)
            .with("elapsed", elapsed)
    }

    pub fn rate_payload(&self) -> Option<RatePayload> {
        if self.event != EventKind::Rate {
            return None;
        }
        let d = &self.data;
        Some(RatePayload {
            rate: d.get("rate")?.as_f64()?,
            units: d.get("units")?.as_str()?.to_string(),
            batch: d.get("batch")?.as_u64()?,
            elapsed: d.get("elapsed").and_then(Value::as_f64),
            end: d.get("end").and_then(Value::as_f64),
            warmup: d.get("warmup").and_then(Value::as_bool).unwrap_or(false),
        })
    }

    fn check(&self) -> Result<(), String> {
        if !self.time.is_finite() {
            return Err("time must be a finite number".into());
        }
        if self.event == EventKind::Rate {
            let p = self
                .rate_payload()
                .ok_or("rate payload needs numeric `rate`, text `units`, integer `batch`")?;
            if !(p.rate.is_finite() && p.rate > 0.0) {
                return Err("rate must be > 0".into());
            }
            if p.batch == 0 {
                return Err("batch must be > 0".into());
            }
            if p.elapsed.is_some_and(|e| !(e > 0.0)) {
                return Err("elapsed must be > 0".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("event not encodable: {0}")]
    Invalid(String),
    #[error("event not serializable: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// Encode one event as a single `\n`-terminated line.
pub fn encode_event(e: &MetricEvent) -> Result<String, ProtocolError> {
    e.check().map_err(ProtocolError::Invalid)?;
    let mut line = serde_json::to_string(e)?;
    debug_assert!(!line.contains('\n'));
    line.push('\n');
    Ok(line)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    Malformed(String),
    NotAnObject,
    MissingKey(&'static str),
    UnknownKey(String),
    UnknownKind(String),
    BadField(String),
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::Malformed(m) => write!(f, "malformed json: {m}"),
            RejectReason::NotAnObject => f.write_str("not a json object"),
            RejectReason::MissingKey(k) => write!(f, "missing key `{k}`"),
            RejectReason::UnknownKey(k) => write!(f, "unexpected key `{k}`"),
            RejectReason::UnknownKind(k) => write!(f, "unknown kind `{k}`"),
            RejectReason::BadField(m) => write!(f, "invalid field: {m}"),
        }
    }
}

/// A line that could not be decoded. Carries the raw text so nothing is lost.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub raw: String,
    pub reason: RejectReason,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} in line {:?}", self.reason, self.raw)
    }
}

pub fn decode_event(line: &str) -> Result<MetricEvent, Rejection> {
    let text = line.strip_suffix('\n').unwrap_or(line);
    let text = text.strip_suffix('\r').unwrap_or(text);
    let reject = |reason| Rejection {
        raw: text.to_string(),
        reason,
    };

    let value: Value =
        serde_json::from_str(text).map_err(|e| reject(RejectReason::Malformed(e.to_string())))?;
    let Value::Object(mut obj) = value else {
        return Err(reject(RejectReason::NotAnObject));
    };

    let kind = match obj.remove("event") {
        Some(Value::String(s)) => {
            EventKind::from_name(&s).ok_or_else(|| reject(RejectReason::UnknownKind(s)))?
        }
        Some(_) => return Err(reject(RejectReason::BadField("`event` must be text".into()))),
        None => return Err(reject(RejectReason::MissingKey("event"))),
    };
    let time = match obj.remove("time") {
        Some(v) => v
            .as_f64()
            .ok_or_else(|| reject(RejectReason::BadField("`time` must be a number".into())))?,
        None => return Err(reject(RejectReason::MissingKey("time"))),
    };
    let task = match obj.remove("task") {
        Some(Value::String(s)) => s,
        Some(_) => return Err(reject(RejectReason::BadField("`task` must be text".into()))),
        None => return Err(reject(RejectReason::MissingKey("task"))),
    };
    let data = match obj.remove("data") {
        Some(Value::Object(m)) => m,
        Some(_) => return Err(reject(RejectReason::BadField("`data` must be an object".into()))),
        None => return Err(reject(RejectReason::MissingKey("data"))),
    };
    if let Some(extra) = obj.keys().next() {
        return Err(reject(RejectReason::UnknownKey(extra.clone())));
    }

    let event = MetricEvent {
        event: kind,
        time,
        task,
        data,
    };
    event.check().map_err(|m| reject(RejectReason::BadField(m)))?;
    Ok(event)
}

#[derive(Debug, Clone, PartialEq)]
pub enum StreamItem {
    Event(MetricEvent),
    Rejected(Rejection),
    /// The source failed; nothing follows this item.
    Failed(String),
}

impl StreamItem {
    pub fn event(&self) -> Option<&MetricEvent> {
        match self {
            StreamItem::Event(e) => Some(e),
            _ => None,
        }
    }
}

/// Splits an incoming byte stream into lines, keeping a partial trailing line
/// until it is completed.
#[derive(Debug, Default)]
pub struct LineFramer {
    partial: Vec<u8>,
}

impl LineFramer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, chunk: &[u8], out: &mut impl Extend<StreamItem>) {
        let mut rest = chunk;
        while let Some(pos) = rest.iter().position(|&b| b == b'\n') {
            self.partial.extend_from_slice(&rest[..pos]);
            let line = std::mem::take(&mut self.partial);
            if let Some(item) = decode_bytes(&line) {
                out.extend(Some(item));
            }
            rest = &rest[pos + 1..];
        }
        self.partial.extend_from_slice(rest);
    }

    /// Flush a trailing unterminated line at end of input.
    pub fn finish(&mut self, out: &mut impl Extend<StreamItem>) {
        let line = std::mem::take(&mut self.partial);
        if let Some(item) = decode_bytes(&line) {
            out.extend(Some(item));
        }
    }
}

fn decode_bytes(line: &[u8]) -> Option<StreamItem> {
    let text = String::from_utf8_lossy(line);
    if text.trim().is_empty() {
        return None;
    }
    Some(match decode_event(&text) {
        Ok(e) => StreamItem::Event(e),
        Err(r) => StreamItem::Rejected(r),
    })
}

/// Iterator over the events of a byte source, in arrival order.
pub struct EventReader<R> {
    source: R,
    framer: LineFramer,
    queue: VecDeque<StreamItem>,
    done: bool,
    buf: Box<[u8]>,
}

pub fn read_stream<R: Read>(source: R) -> EventReader<R> {
    EventReader {
        source,
        framer: LineFramer::new(),
        queue: VecDeque::new(),
        done: false,
        buf: vec![0; 8192].into_boxed_slice(),
    }
}

impl<R: Read> Iterator for EventReader<R> {
    type Item = StreamItem;

    fn next(&mut self) -> Option<StreamItem> {
        loop {
            if let Some(item) = self.queue.pop_front() {
                return Some(item);
            }
            if self.done {
                return None;
            }
            match self.source.read(&mut self.buf) {
                Ok(0) => {
                    self.done = true;
                    self.framer.finish(&mut self.queue);
                }
                Ok(n) => self.framer.push(&self.buf[..n], &mut self.queue),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => {
                    self.done = true;
                    self.queue.push_back(StreamItem::Failed(e.to_string()));
                }
            }
        }
    }
}

/// One timed unit of work. The rate is always derived, never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub task: String,
    pub work: u64,
    pub elapsed: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(default)]
    pub warmup: bool,
}

impl Observation {
    pub fn rate(&self) -> f64 {
        self.work as f64 / self.elapsed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "reason", rename_all = "lowercase")]
pub enum Terminal {
    Success,
    Error(String),
    Timeout,
}

impl Terminal {
    pub fn is_success(&self) -> bool {
        matches!(self, Terminal::Success)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationLog {
    pub process_id: String,
    pub observations: Vec<Observation>,
    pub terminal: Terminal,
    /// Timing tuples dropped because their end preceded their start.
    pub faults: u64,
    pub raw_events: Vec<MetricEvent>,
}

impl ObservationLog {
    /// Fold a process's event stream into observations and a terminal state.
    ///
    /// Success requires a `success` event, no `error` event, and at least
    /// `obs_min` observations from every emitting task.
    pub fn from_events(process_id: impl Into<String>, events: Vec<MetricEvent>, obs_min: u32) -> Self {
        let mut observations = Vec::new();
        let mut pending_loss: BTreeMap<&str, f64> = BTreeMap::new();
        let mut error = None;
        let mut success = false;
        let mut faults = 0;

        for e in &events {
            match e.event {
                EventKind::Loss => {
                    if let Some(l) = e.data.get("loss").and_then(Value::as_f64) {
                        pending_loss.insert(&e.task, l);
                    }
                }
                EventKind::Rate => {
                    if let Some(p) = e.rate_payload() {
                        observations.push(Observation {
                            task: e.task.clone(),
                            work: p.batch,
                            elapsed: p.elapsed.unwrap_or(p.batch as f64 / p.rate),
                            loss: pending_loss.remove(e.task.as_str()),
                            warmup: p.warmup,
                        });
                    }
                }
                EventKind::Error => {
                    let msg = e
                        .data
                        .get("message")
                        .and_then(Value::as_str)
                        .unwrap_or("error")
                        .to_string();
                    error.get_or_insert(msg);
                }
                EventKind::Success => success = true,
                EventKind::End => {
                    faults += e.data.get("faults").and_then(Value::as_u64).unwrap_or(0);
                }
                _ => {}
            }
        }

        let terminal = if let Some(msg) = error {
            Terminal::Error(msg)
        } else if !success {
            Terminal::Error("no success event".into())
        } else if min_task_count(&observations) < obs_min as usize {
            Terminal::Error("insufficient observations".into())
        } else {
            Terminal::Success
        };

        Self {
            process_id: process_id.into(),
            observations,
            terminal,
            faults,
            raw_events: events,
        }
    }
}

fn min_task_count(observations: &[Observation]) -> usize {
    let mut per_task: BTreeMap<&str, usize> = BTreeMap::new();
    for o in observations {
        *per_task.entry(o.task.as_str()).or_default() += 1;
    }
    per_task.values().copied().min().unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_line_carries_derived_rate() {
        let line = encode_event(&MetricEvent::rate(1.0, "train", 32, 0.5, "images")).unwrap();
        assert!(line.contains(r#""rate":64.0"#), "{line}");
        assert!(line.contains(r#""batch":32"#));
        assert!(line.ends_with('\n'));
        assert_eq!(line.matches('\n').count(), 1);
    }

    #[test]
    fn empty_end_event() {
        let line = encode_event(&MetricEvent::new(EventKind::End, 2.0, "0")).unwrap();
        assert_eq!(line, "{\"event\":\"end\",\"time\":2.0,\"task\":\"0\",\"data\":{}}\n");
    }

    #[test]
    fn canonical_rate_line_decodes() {
        let e = decode_event(
            r#"{"event":"rate","time":1.0,"task":"train","data":{"rate":64.0,"units":"images","batch":32}}"#,
        )
        .unwrap();
        assert_eq!(e.event, EventKind::Rate);
        let p = e.rate_payload().unwrap();
        assert_eq!((p.rate, p.batch, p.units.as_str()), (64.0, 32, "images"));
    }

    #[test]
    fn rejections() {
        let r = decode_event("not json at all").unwrap_err();
        assert_eq!(r.raw, "not json at all");
        assert!(matches!(r.reason, RejectReason::Malformed(_)));

        let r = decode_event(r#"{"event":"foo","time":1,"task":"t","data":{}}"#).unwrap_err();
        assert!(r.reason.to_string().contains("unknown kind"));

        let r = decode_event(r#"{"event":"rate","time":1,"task":"t","data":{"rate":-1.0,"units":"x","batch":3}}"#)
            .unwrap_err();
        assert!(matches!(r.reason, RejectReason::BadField(_)));

        assert!(matches!(
            decode_event(r#"{"event":"end","time":1,"data":{}}"#).unwrap_err().reason,
            RejectReason::MissingKey("task")
        ));
        assert!(matches!(decode_event("[1,2]").unwrap_err().reason, RejectReason::NotAnObject));
    }

    #[test]
    fn unknown_payload_keys_survive() {
        let line = r#"{"event":"gpudata","time":3.5,"task":"0","data":{"device":"1","vendor_blob":{"x":[1,2]}}}"#;
        let e = decode_event(line).unwrap();
        assert_eq!(encode_event(&e).unwrap().trim_end(), line);
    }

    #[test]
    fn non_finite_time_is_not_encodable() {
        assert!(encode_event(&MetricEvent::new(EventKind::End, f64::NAN, "t")).is_err());
    }

    #[test]
    fn framing_across_chunks() {
        let a = encode_event(&MetricEvent::new(EventKind::Start, 1.0, "t")).unwrap();
        let b = encode_event(&MetricEvent::new(EventKind::End, 2.0, "t")).unwrap();
        let all = format!("{a}{b}");
        let bytes = all.as_bytes();
        let mut framer = LineFramer::new();
        let mut out = Vec::new();
        framer.push(&bytes[..5], &mut out);
        framer.push(&bytes[5..a.len() + 3], &mut out);
        assert_eq!(out.len(), 1);
        framer.push(&bytes[a.len() + 3..], &mut out);
        framer.finish(&mut out);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn unterminated_last_line_is_kept() {
        let items: Vec<_> = read_stream(&b"{\"event\":\"end\",\"time\":1,\"task\":\"t\",\"data\":{}}"[..]).collect();
        assert_eq!(items.len(), 1);
        assert!(items[0].event().is_some());
    }

    #[test]
    fn read_failure_ends_stream() {
        struct Broken(bool);
        impl Read for Broken {
            fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
                if self.0 {
                    return Err(io::Error::other("pipe closed"));
                }
                self.0 = true;
                let line = b"{\"event\":\"start\",\"time\":0,\"task\":\"t\",\"data\":{}}\n";
                buf[..line.len()].copy_from_slice(line);
                Ok(line.len())
            }
        }
        let items: Vec<_> = read_stream(Broken(false)).collect();
        assert_eq!(items.len(), 2);
        assert!(items[0].event().is_some());
        assert!(matches!(&items[1], StreamItem::Failed(m) if m.contains("pipe closed")));
    }

    #[test]
    fn log_from_events() {
        let mut events = vec![MetricEvent::new(EventKind::Start, 0.0, "0")];
        for i in 0..3 {
            events.push(MetricEvent::new(EventKind::Loss, 1.0, "0").with("loss", 0.5 + i as f64));
            events.push(MetricEvent::rate(1.0, "0", 32, 0.5, "images"));
        }
        events.push(MetricEvent::new(EventKind::Success, 2.0, "0"));
        let log = ObservationLog::from_events("p0", events.clone(), 3);
        assert!(log.terminal.is_success());
        assert_eq!(log.observations.len(), 3);
        assert_eq!(log.observations[2].loss, Some(2.5));
        assert!(log.observations.iter().all(|o| o.rate() == 64.0));

        let short = ObservationLog::from_events("p0", events, 4);
        assert_eq!(short.terminal, Terminal::Error("insufficient observations".into()));
    }
}
