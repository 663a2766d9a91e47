//! Simulation traces and the temporal assertions checked against them.
//!
//! A trace is the machine-checkable form of an orchestration workflow: one
//! event per line of newline-delimited JSON, totally ordered by logical time
//! with a deterministic tiebreak. Assertions express ordered subsequences,
//! precedence, absence, and counts; a small text syntax makes them usable
//! from the command line.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intent::DomainId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceEventKind {
    IntentReceived,
    IntentSent,
    IntentRejected,
    PipelineStateChanged,
    MonitoringSent,
    ConflictResolved,
}

impl TraceEventKind {
    pub const ALL: [TraceEventKind; 6] = [
        TraceEventKind::IntentReceived,
        TraceEventKind::IntentSent,
        TraceEventKind::IntentRejected,
        TraceEventKind::PipelineStateChanged,
        TraceEventKind::MonitoringSent,
        TraceEventKind::ConflictResolved,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TraceEventKind::IntentReceived => "IntentReceived",
            TraceEventKind::IntentSent => "IntentSent",
            TraceEventKind::IntentRejected => "IntentRejected",
            TraceEventKind::PipelineStateChanged => "PipelineStateChanged",
            TraceEventKind::MonitoringSent => "MonitoringSent",
            TraceEventKind::ConflictResolved => "ConflictResolved",
        }
    }
}

impl fmt::Display for TraceEventKind {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TraceEventKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TraceEventKind::ALL
            .iter()
            .find(|k| k.as_str() == s)
            .copied()
            .ok_or_else(|| format!("unknown trace event kind `{s}`"))
    }
}

/// One timestamped record. Details is a flat string map whose keys depend on
/// the event kind (intent_id, pipeline_id, from, to, ...).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: u64,
    pub domain: DomainId,
    pub event: TraceEventKind,
    pub details: BTreeMap<String, String>,
}

impl TraceEvent {
    pub fn detail(&self, key: &str) -> Option<&str> {
        self.details.get(key).map(|s| s.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("trace line {line}: {message}")]
pub struct TraceReadError {
    pub line: usize,
    pub message: String,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter()
    }

    /// One JSON object per line, fields `{t, domain, event, details}`.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace event serialization"));
            out.push('\n');
        }
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Trace, TraceReadError> {
        let mut events = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let event: TraceEvent = serde_json::from_str(line)
                .map_err(|e| TraceReadError { line: idx + 1, message: e.to_string() })?;
            events.push(event);
        }
        Ok(Trace { events })
    }
}

// ---------------------------------------------------------------------------
// Assertions
// ---------------------------------------------------------------------------

/// Matches trace events by kind, domain, and any subset of detail entries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventPattern {
    pub event: Option<TraceEventKind>,
    pub domain: Option<String>,
    pub details: Vec<(String, String)>,
}

impl EventPattern {
    pub fn of(kind: TraceEventKind) -> Self {
        EventPattern { event: Some(kind), domain: None, details: Vec::new() }
    }

    pub fn at(mut self, domain: &str) -> Self {
        self.domain = Some(domain.to_string());
        self
    }

    pub fn with(mut self, key: &str, value: &str) -> Self {
        self.details.push((key.to_string(), value.to_string()));
        self
    }

    pub fn matches(&self, event: &TraceEvent) -> bool {
        if let Some(kind) = self.event {
            if event.event != kind {
                return false;
            }
        }
        if let Some(domain) = &self.domain {
            if event.domain.as_str() != domain {
                return false;
            }
        }
        self.details
            .iter()
            .all(|(k, v)| event.detail(k) == Some(v.as_str()))
    }
}

impl fmt::Display for EventPattern {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(kind) = self.event {
            parts.push(format!("event={kind}"));
        }
        if let Some(domain) = &self.domain {
            parts.push(format!("domain={domain}"));
        }
        for (k, v) in &self.details {
            parts.push(format!("{k}={v}"));
        }
        if parts.is_empty() {
            parts.push("*".to_string());
        }
        f.write_str(&parts.join(" "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountCmp {
    Exactly,
    AtLeast,
    AtMost,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceAssertion {
    /// All patterns occur, in order (not necessarily adjacent).
    Subsequence(Vec<EventPattern>),
    /// Every match of `after` is preceded by at least one match of `before`.
    Precedes { before: EventPattern, after: EventPattern },
    /// No event matches.
    Absent(EventPattern),
    /// The number of matches compares to `n` as requested.
    Count { pattern: EventPattern, cmp: CountCmp, n: usize },
}

impl fmt::Display for TraceAssertion {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self {
            TraceAssertion::Subsequence(patterns) => {
                let parts: Vec<String> = patterns.iter().map(|p| p.to_string()).collect();
                write!(f, "subsequence: {}", parts.join(" -> "))
            }
            TraceAssertion::Precedes { before, after } => {
                write!(f, "precedes: {before} -> {after}")
            }
            TraceAssertion::Absent(p) => write!(f, "absent: {p}"),
            TraceAssertion::Count { pattern, cmp, n } => {
                let op = match cmp {
                    CountCmp::Exactly => "=",
                    CountCmp::AtLeast => ">=",
                    CountCmp::AtMost => "<=",
                };
                write!(f, "count{op}{n}: {pattern}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid assertion `{text}`: {message}")]
pub struct AssertionParseError {
    pub text: String,
    pub message: String,
}

impl TraceAssertion {
    /// Parse the text syntax:
    ///
    /// ```text
    /// subsequence: <pattern> -> <pattern> [-> ...]
    /// precedes: <pattern> -> <pattern>
    /// absent: <pattern>
    /// count=N: <pattern>      (also count>=N, count<=N)
    /// ```
    ///
    /// where `<pattern>` is space-separated `key=value` terms; `event` and
    /// `domain` are pattern fields, everything else matches details.
    pub fn parse(text: &str) -> Result<TraceAssertion, AssertionParseError> {
        let fail = |message: &str| AssertionParseError {
            text: text.to_string(),
            message: message.to_string(),
        };
        let (head, body) = text.split_once(':').ok_or_else(|| fail("missing `:`"))?;
        let head = head.trim();
        let body = body.trim();
        let parse_pattern = |part: &str| -> Result<EventPattern, AssertionParseError> {
            let mut pattern = EventPattern::default();
            for term in part.split_whitespace() {
                let (key, value) = term
                    .split_once('=')
                    .ok_or_else(|| fail(&format!("term `{term}` is not key=value")))?;
                match key {
                    "event" => {
                        pattern.event =
                            Some(value.parse().map_err(|e: String| fail(&e))?);
                    }
                    "domain" => pattern.domain = Some(value.to_string()),
                    other => pattern.details.push((other.to_string(), value.to_string())),
                }
            }
            if pattern == EventPattern::default() {
                return Err(fail("empty pattern"));
            }
            Ok(pattern)
        };

        if head == "subsequence" {
            let patterns: Result<Vec<_>, _> = body.split("->").map(|p| parse_pattern(p.trim())).collect();
            let patterns = patterns?;
            if patterns.is_empty() {
                return Err(fail("subsequence needs at least one pattern"));
            }
            return Ok(TraceAssertion::Subsequence(patterns));
        }
        if head == "precedes" {
            let mut parts = body.split("->");
            let before = parse_pattern(parts.next().ok_or_else(|| fail("missing patterns"))?.trim())?;
            let after = parse_pattern(parts.next().ok_or_else(|| fail("precedes needs two patterns"))?.trim())?;
            if parts.next().is_some() {
                return Err(fail("precedes takes exactly two patterns"));
            }
            return Ok(TraceAssertion::Precedes { before, after });
        }
        if head == "absent" {
            return Ok(TraceAssertion::Absent(parse_pattern(body)?));
        }
        if let Some(rest) = head.strip_prefix("count") {
            let (cmp, num) = if let Some(n) = rest.strip_prefix(">=") {
                (CountCmp::AtLeast, n)
            } else if let Some(n) = rest.strip_prefix("<=") {
                (CountCmp::AtMost, n)
            } else if let Some(n) = rest.strip_prefix('=') {
                (CountCmp::Exactly, n)
            } else {
                return Err(fail("count needs `=`, `>=`, or `<=`"));
            };
            let n: usize = num.parse().map_err(|_| fail(&format!("bad count `{num}`")))?;
            return Ok(TraceAssertion::Count { pattern: parse_pattern(body)?, cmp, n });
        }
        Err(fail("unknown assertion kind"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AssertionOutcome {
    pub assertion: String,
    pub passed: bool,
    /// Trace index of the first violation, where one exists.
    pub counterexample: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceReport {
    pub outcomes: Vec<AssertionOutcome>,
}

impl TraceReport {
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }
}

/// Evaluate every assertion against the trace.
pub fn check_trace(trace: &Trace, assertions: &[TraceAssertion]) -> TraceReport {
    let outcomes = assertions
        .iter()
        .map(|a| {
            let (passed, counterexample, message) = evaluate(trace, a);
            AssertionOutcome { assertion: a.to_string(), passed, counterexample, message }
        })
        .collect();
    TraceReport { outcomes }
}

fn evaluate(trace: &Trace, assertion: &TraceAssertion) -> (bool, Option<usize>, String) {
    match assertion {
        TraceAssertion::Subsequence(patterns) => {
            let mut next = 0usize;
            for (idx, event) in trace.events.iter().enumerate() {
                if next < patterns.len() && patterns[next].matches(event) {
                    next += 1;
                    let _ = idx;
                }
            }
            if next == patterns.len() {
                (true, None, format!("matched all {} patterns in order", patterns.len()))
            } else {
                (
                    false,
                    None,
                    format!(
                        "matched {next} of {} patterns; `{}` not found after the prefix",
                        patterns.len(),
                        patterns[next]
                    ),
                )
            }
        }
        TraceAssertion::Precedes { before, after } => {
            let mut seen_before = false;
            for (idx, event) in trace.events.iter().enumerate() {
                if before.matches(event) {
                    seen_before = true;
                }
                if after.matches(event) && !seen_before {
                    return (
                        false,
                        Some(idx),
                        format!("event at index {idx} matched `{after}` before any `{before}`"),
                    );
                }
            }
            (true, None, "ordering holds".into())
        }
        TraceAssertion::Absent(pattern) => {
            match trace.events.iter().position(|e| pattern.matches(e)) {
                Some(idx) => (false, Some(idx), format!("index {idx} matches `{pattern}`")),
                None => (true, None, "no match".into()),
            }
        }
        TraceAssertion::Count { pattern, cmp, n } => {
            let matches: Vec<usize> = trace
                .events
                .iter()
                .enumerate()
                .filter(|(_, e)| pattern.matches(e))
                .map(|(i, _)| i)
                .collect();
            let count = matches.len();
            let ok = match cmp {
                CountCmp::Exactly => count == *n,
                CountCmp::AtLeast => count >= *n,
                CountCmp::AtMost => count <= *n,
            };
            let counterexample = if ok {
                None
            } else {
                match cmp {
                    // The first excess match, where there is one.
                    CountCmp::Exactly if count > *n => matches.get(*n).copied(),
                    CountCmp::AtMost => matches.get(*n).copied(),
                    _ => None,
                }
            };
            (ok, counterexample, format!("found {count} matches"))
        }
    }
}
