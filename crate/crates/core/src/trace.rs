//! Trace records and the line-oriented trace file format.
//!
//! One JSON object per line. Field order is fixed by the struct and detail
//! maps are key-ordered, so equal traces serialize to equal bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ofmodel::{ControlMessage, ControllerId, EventId, SwitchId};
use crate::replica::ReplMessage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RecordKind {
    Start,
    Send,
    Deliver,
    Drop,
    Crash,
    Detect,
    Apply,
    Exec,
    Stall,
    End,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Endpoint {
    Controller(ControllerId),
    Switch(SwitchId),
    Harness,
}

impl Endpoint {
    pub fn controller(self) -> Option<ControllerId> {
        match self {
            Endpoint::Controller(c) => Some(c),
            _ => None,
        }
    }

    pub fn switch(self) -> Option<SwitchId> {
        match self {
            Endpoint::Switch(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Controller(c) => c.fmt(f),
            Endpoint::Switch(s) => s.fmt(f),
            Endpoint::Harness => f.write_str("harness"),
        }
    }
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let num = |rest: &str| {
            rest.parse::<u32>()
                .map_err(|_| format!("bad endpoint {s:?}"))
        };
        if s == "harness" {
            Ok(Endpoint::Harness)
        } else if let Some(rest) = s.strip_prefix('c') {
            Ok(Endpoint::Controller(ControllerId(num(rest)?)))
        } else if let Some(rest) = s.strip_prefix('s') {
            Ok(Endpoint::Switch(SwitchId(num(rest)?)))
        } else {
            Err(format!("bad endpoint {s:?}"))
        }
    }
}

impl From<Endpoint> for String {
    fn from(e: Endpoint) -> String {
        e.to_string()
    }
}

impl TryFrom<String> for Endpoint {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Msg {
    Control(ControlMessage),
    Repl(ReplMessage),
}

impl Msg {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Msg::Control(m) => m.kind_name(),
            Msg::Repl(m) => m.kind_name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub t: u64,
    pub kind: RecordKind,
    pub actor: Endpoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<Endpoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub msg: Option<Msg>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub detail: BTreeMap<String, String>,
}

impl TraceRecord {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.detail.get(key).map(String::as_str)
    }

    pub fn get_u64(&self, key: &str) -> Option<u64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    pub fn get_event(&self, key: &str) -> Option<EventId> {
        self.get(key).and_then(parse_event)
    }

    pub fn is_setup(&self) -> bool {
        self.get("phase") == Some("setup")
    }
}

/// Inverse of `EventId`'s `Display` (`s<switch>#<seq>`).
pub fn parse_event(s: &str) -> Option<EventId> {
    let (sw, seq) = s.strip_prefix('s')?.split_once('#')?;
    Some(EventId {
        switch: SwitchId(sw.parse().ok()?),
        seq: seq.parse().ok()?,
    })
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: step {step} does not follow step {prev}")]
    StepOrder { line: usize, step: u64, prev: u64 },
    #[error("trace is empty")]
    Empty,
    #[error("trace does not start with a START record")]
    MissingStart,
    #[error("trace is truncated: no END record")]
    MissingEnd,
    #[error("line {line}: record after END")]
    AfterEnd { line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }

    /// Parses and validates framing: START first, END last, steps increasing.
    pub fn from_jsonl(text: &str) -> Result<Self, TraceError> {
        let mut records = Vec::new();
        let mut ended = false;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            if ended {
                return Err(TraceError::AfterEnd { line: line_no });
            }
            let rec: TraceRecord =
                serde_json::from_str(line).map_err(|source| TraceError::Json {
                    line: line_no,
                    source,
                })?;
            if let Some(prev) = records.last().map(|r: &TraceRecord| r.step) {
                if rec.step <= prev {
                    return Err(TraceError::StepOrder {
                        line: line_no,
                        step: rec.step,
                        prev,
                    });
                }
            } else if rec.kind != RecordKind::Start {
                return Err(TraceError::MissingStart);
            }
            ended = rec.kind == RecordKind::End;
            records.push(rec);
        }
        if records.is_empty() {
            return Err(TraceError::Empty);
        }
        if !ended {
            return Err(TraceError::MissingEnd);
        }
        Ok(Trace { records })
    }

    pub fn read(path: &std::path::Path) -> Result<Self, TraceError> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &std::path::Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_jsonl())
    }

    pub fn start(&self) -> Option<&TraceRecord> {
        self.records.first().filter(|r| r.kind == RecordKind::Start)
    }

    pub fn end(&self) -> Option<&TraceRecord> {
        self.records.last().filter(|r| r.kind == RecordKind::End)
    }

    pub fn by_step(&self, step: u64) -> Option<&TraceRecord> {
        self.records
            .binary_search_by_key(&step, |r| r.step)
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn of_kind(&self, kind: RecordKind) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: u64, kind: RecordKind) -> TraceRecord {
        TraceRecord {
            step,
            t: 0,
            kind,
            actor: Endpoint::Harness,
            peer: None,
            msg: None,
            detail: BTreeMap::new(),
        }
    }

    #[test]
    fn endpoints_round_trip_through_strings() {
        for e in [
            Endpoint::Controller(ControllerId(3)),
            Endpoint::Switch(SwitchId(12)),
            Endpoint::Harness,
        ] {
            assert_eq!(e.to_string().parse::<Endpoint>(), Ok(e));
        }
        assert!("x1".parse::<Endpoint>().is_err());
        assert!("c".parse::<Endpoint>().is_err());
    }

    #[test]
    fn event_ids_parse_from_display() {
        let e = EventId {
            switch: SwitchId(2),
            seq: 17,
        };
        assert_eq!(parse_event(&e.to_string()), Some(e));
        assert_eq!(parse_event("2#17"), None);
    }

    #[test]
    fn jsonl_round_trip_and_framing() {
        let mut mid = rec(1, RecordKind::Send);
        mid.detail.insert("b".into(), "2".into());
        mid.detail.insert("a".into(), "1".into());
        mid.msg = Some(Msg::Control(ControlMessage::Hello));
        let trace = Trace {
            records: vec![rec(0, RecordKind::Start), mid, rec(2, RecordKind::End)],
        };
        let text = trace.to_jsonl();
        assert!(text
            .lines()
            .nth(1)
            .unwrap()
            .contains(r#""detail":{"a":"1","b":"2"}"#));
        assert_eq!(Trace::from_jsonl(&text).unwrap(), trace);

        let truncated: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            Trace::from_jsonl(&truncated),
            Err(TraceError::MissingEnd)
        ));
        let cut = &text[..text.len() - 10];
        assert!(matches!(
            Trace::from_jsonl(cut),
            Err(TraceError::Json { line: 3, .. })
        ));
        assert!(matches!(Trace::from_jsonl(""), Err(TraceError::Empty)));
        let headless: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            Trace::from_jsonl(&headless),
            Err(TraceError::MissingStart)
        ));
    }
}
