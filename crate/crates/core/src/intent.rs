//! The declarative intent language: types, text format, validation, and the
//! canonical JSON interchange encoding.
//!
//! An intent states *what* outcome is required — an operation applied to an
//! operand, qualified by operational parameters and constraints — never how
//! to achieve it. Scalars are carried verbatim (`20%` stays the string
//! `"20%"`); interpretation is the receiving orchestrator's business.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::itf::{self, ItfErrorKind, MapEntry, Spanned, Value};
use crate::kv::ParamMap;

// ---------------------------------------------------------------------------
// Domain identifiers and intent structure
// ---------------------------------------------------------------------------

/// Identifier of a network domain (e.g. `OSS-01`, `Factory-01`). Non-empty,
/// free of whitespace.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DomainId(String);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid domain id `{0}`: {1}")]
pub struct DomainIdError(String, &'static str);

impl DomainId {
    pub fn new(value: impl Into<String>) -> Result<Self, DomainIdError> {
        let value = value.into();
        if value.is_empty() {
            return Err(DomainIdError(value, "empty"));
        }
        if value.chars().any(|c| c.is_whitespace()) {
            return Err(DomainIdError(value, "contains whitespace"));
        }
        Ok(DomainId(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for DomainId {
    type Err = DomainIdError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DomainId::new(s)
    }
}

impl Serialize for DomainId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for DomainId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        DomainId::new(s).map_err(serde::de::Error::custom)
    }
}

/// Who issued an intent: the human operator (root entry point only) or an
/// orchestrator deriving requirements for the level below it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Origin {
    Operator,
    Mlfo(DomainId),
}

impl Origin {
    pub fn domain(&self) -> Option<&DomainId> {
        match self {
            Origin::Operator => None,
            Origin::Mlfo(d) => Some(d),
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self {
            Origin::Operator => f.write_str("operator"),
            Origin::Mlfo(d) => write!(f, "mlfo:{d}"),
        }
    }
}

impl FromStr for Origin {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "operator" {
            return Ok(Origin::Operator);
        }
        if let Some(domain) = s.strip_prefix("mlfo:") {
            let d = DomainId::new(domain).map_err(|e| e.to_string())?;
            return Ok(Origin::Mlfo(d));
        }
        Err(format!("invalid origin `{s}`: expected `operator` or `mlfo:<domain>`"))
    }
}

impl Serialize for Origin {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Origin {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One requirement within an intent: apply `operation` to `operand` at the
/// domain `target_id`, qualified by `oparams` and `constraints`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetDirective {
    #[serde(rename = "id")]
    pub target_id: DomainId,
    pub operation: String,
    pub operand: String,
    #[serde(default, skip_serializing_if = "ParamMap::is_empty")]
    pub oparams: ParamMap,
    #[serde(default, skip_serializing_if = "ParamMap::is_empty")]
    pub constraints: ParamMap,
}

impl TargetDirective {
    pub fn new(
        target_id: DomainId,
        operation: impl Into<String>,
        operand: impl Into<String>,
    ) -> Self {
        TargetDirective {
            target_id,
            operation: operation.into(),
            operand: operand.into(),
            oparams: ParamMap::new(),
            constraints: ParamMap::new(),
        }
    }

    pub fn with_oparam(mut self, key: &str, value: &str) -> Self {
        self.oparams.insert(key, value).expect("valid oparam");
        self
    }

    pub fn with_constraint(mut self, key: &str, value: &str) -> Self {
        self.constraints.insert(key, value).expect("valid constraint");
        self
    }

    fn check(&self) -> Result<(), String> {
        if self.operation.is_empty() {
            return Err("directive operation is empty".into());
        }
        if self.operand.is_empty() {
            return Err("directive operand is empty".into());
        }
        for field in [&self.operation, &self.operand] {
            if field.chars().any(|c| c.is_whitespace()) {
                return Err(format!("`{field}` contains whitespace"));
            }
        }
        Ok(())
    }
}

/// A complete declarative requirement: identifier, issuer, one or more
/// target directives, and an optional conflict-resolution priority.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intent {
    #[serde(rename = "intentid")]
    pub intent_id: String,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<u32>,
    pub targets: Vec<TargetDirective>,
}

impl Intent {
    pub fn new(intent_id: impl Into<String>, origin: Origin, targets: Vec<TargetDirective>) -> Self {
        Intent { intent_id: intent_id.into(), origin, priority: None, targets }
    }

    pub fn with_priority(mut self, priority: u32) -> Self {
        self.priority = Some(priority);
        self
    }

    /// Structural invariants shared by every code path that builds an intent.
    pub fn check(&self) -> Result<(), String> {
        if self.intent_id.is_empty() {
            return Err("intentid is empty".into());
        }
        if self.intent_id.chars().any(|c| c.is_whitespace()) {
            return Err("intentid contains whitespace".into());
        }
        if self.targets.is_empty() {
            return Err("targets is empty".into());
        }
        for d in &self.targets {
            d.check()?;
        }
        Ok(())
    }

    /// Compact `operation:operand` summary of all directives, used in traces.
    pub fn directive_summary(&self) -> String {
        let parts: Vec<String> = self
            .targets
            .iter()
            .map(|d| format!("{}:{}", d.operation, d.operand))
            .collect();
        parts.join(";")
    }
}

// ---------------------------------------------------------------------------
// Vocabulary and validation
// ---------------------------------------------------------------------------

/// Known operation verbs and operand names. The baseline set is always
/// present; extra entries may be registered per deployment. In strict mode
/// unknown verbs/operands are errors, otherwise warnings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    operations: BTreeSet<String>,
    operands: BTreeSet<String>,
    pub strict: bool,
}

pub const BASELINE_OPERATIONS: [&str; 5] = ["maintain", "anticipate", "stop", "maximise", "minimise"];
pub const BASELINE_OPERANDS: [&str; 6] =
    ["SLA", "QoS", "ml_inference", "ml_offload", "accuracy", "capacity"];

impl Vocabulary {
    pub fn new(strict: bool) -> Self {
        Vocabulary {
            operations: BASELINE_OPERATIONS.iter().map(|s| s.to_string()).collect(),
            operands: BASELINE_OPERANDS.iter().map(|s| s.to_string()).collect(),
            strict,
        }
    }

    pub fn with_operation(mut self, op: &str) -> Self {
        self.operations.insert(op.to_string());
        self
    }

    pub fn with_operand(mut self, operand: &str) -> Self {
        self.operands.insert(operand.to_string());
        self
    }

    pub fn knows_operation(&self, op: &str) -> bool {
        self.operations.contains(op)
    }

    pub fn knows_operand(&self, operand: &str) -> bool {
        self.operands.contains(operand)
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::new(false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FindingCode {
    UnknownTarget,
    UnknownOperation,
    UnknownOperand,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub severity: Severity,
    pub code: FindingCode,
    pub directive_index: usize,
    pub message: String,
}

/// Outcome of validating an intent. Findings are data, not failures; the
/// intent is accepted iff no finding is an error.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn accepted(&self) -> bool {
        self.findings.iter().all(|f| f.severity != Severity::Error)
    }
}

/// Check every directive against the topology and vocabulary.
pub fn validate_intent(
    intent: &Intent,
    vocab: &Vocabulary,
    topology_domains: &BTreeSet<DomainId>,
) -> ValidationReport {
    let mut findings = Vec::new();
    let membership_severity = if vocab.strict { Severity::Error } else { Severity::Warning };
    for (idx, d) in intent.targets.iter().enumerate() {
        if !topology_domains.contains(&d.target_id) {
            findings.push(Finding {
                severity: Severity::Error,
                code: FindingCode::UnknownTarget,
                directive_index: idx,
                message: format!("unknown target domain `{}`", d.target_id),
            });
        }
        if !vocab.knows_operation(&d.operation) {
            findings.push(Finding {
                severity: membership_severity,
                code: FindingCode::UnknownOperation,
                directive_index: idx,
                message: format!("unknown operation `{}`", d.operation),
            });
        }
        if !vocab.knows_operand(&d.operand) {
            findings.push(Finding {
                severity: membership_severity,
                code: FindingCode::UnknownOperand,
                directive_index: idx,
                message: format!("unknown operand `{}`", d.operand),
            });
        }
    }
    ValidationReport { findings }
}

// ---------------------------------------------------------------------------
// Text format
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {col}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    MissingIntentId,
    EmptyTargets,
    DuplicateKey(String),
    UnknownKey(String),
    BadIndentation(String),
    MissingField(&'static str),
    InvalidValue(String),
    Malformed(String),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self {
            ParseErrorKind::MissingIntentId => write!(f, "missing intentid"),
            ParseErrorKind::EmptyTargets => write!(f, "targets is empty"),
            ParseErrorKind::DuplicateKey(k) => write!(f, "duplicate key `{k}`"),
            ParseErrorKind::UnknownKey(k) => write!(f, "unknown key `{k}`"),
            ParseErrorKind::BadIndentation(msg) => write!(f, "{msg}"),
            ParseErrorKind::MissingField(k) => write!(f, "missing required key `{k}`"),
            ParseErrorKind::InvalidValue(msg) => write!(f, "{msg}"),
            ParseErrorKind::Malformed(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<itf::ItfError> for ParseError {
    fn from(err: itf::ItfError) -> Self {
        let kind = match err.kind {
            ItfErrorKind::DuplicateKey(k) => ParseErrorKind::DuplicateKey(k),
            ItfErrorKind::TabInIndentation | ItfErrorKind::BadIndentation { .. } => {
                ParseErrorKind::BadIndentation(err.kind.to_string())
            }
            other => ParseErrorKind::Malformed(other.to_string()),
        };
        ParseError { line: err.line, col: err.col, kind }
    }
}

fn err(line: usize, col: usize, kind: ParseErrorKind) -> ParseError {
    ParseError { line, col, kind }
}

/// Parse an intent document. Scalars are preserved verbatim; `origin`
/// defaults to the operator when the document does not carry one.
pub fn parse_intent(text: &str) -> Result<Intent, ParseError> {
    let root = itf::parse(text)?;
    intent_from_tree(&root)
}

/// Interpret an already-parsed tree as an intent (used for intents embedded
/// in scenario files).
pub(crate) fn intent_from_tree(root: &Spanned) -> Result<Intent, ParseError> {
    let entries = root
        .as_map()
        .ok_or_else(|| err(root.line, root.col, ParseErrorKind::Malformed("expected a mapping at top level".into())))?;

    let mut intent_id: Option<(&MapEntry, String)> = None;
    let mut origin = Origin::Operator;
    let mut priority = None;
    let mut targets: Option<&MapEntry> = None;

    for entry in entries {
        match entry.key.as_str() {
            "intentid" => {
                let value = scalar_value(entry)?;
                intent_id = Some((entry, value));
            }
            "origin" => {
                let value = scalar_value(entry)?;
                origin = value.parse().map_err(|msg: String| {
                    err(entry.value.line, entry.value.col, ParseErrorKind::InvalidValue(msg))
                })?;
            }
            "priority" => {
                let value = scalar_value(entry)?;
                priority = Some(value.parse::<u32>().map_err(|_| {
                    err(
                        entry.value.line,
                        entry.value.col,
                        ParseErrorKind::InvalidValue(format!(
                            "priority must be a non-negative integer, got `{value}`"
                        )),
                    )
                })?);
            }
            "targets" => targets = Some(entry),
            other => {
                return Err(err(entry.key_line, entry.key_col, ParseErrorKind::UnknownKey(other.into())))
            }
        }
    }

    let (_, intent_id) = intent_id.ok_or_else(|| err(1, 1, ParseErrorKind::MissingIntentId))?;
    if intent_id.is_empty() {
        return Err(err(1, 1, ParseErrorKind::MissingIntentId));
    }
    let targets_entry = targets.ok_or_else(|| err(1, 1, ParseErrorKind::MissingField("targets")))?;
    let items = match &targets_entry.value.value {
        Value::Seq(items) if !items.is_empty() => items,
        Value::Seq(_) | Value::Empty => {
            return Err(err(targets_entry.key_line, targets_entry.key_col, ParseErrorKind::EmptyTargets))
        }
        other => {
            return Err(err(
                targets_entry.value.line,
                targets_entry.value.col,
                ParseErrorKind::Malformed(format!("targets must be a sequence, got {}", other.kind_name())),
            ))
        }
    };

    let mut directives = Vec::with_capacity(items.len());
    for item in items {
        directives.push(parse_directive(item)?);
    }

    let intent = Intent { intent_id, origin, priority, targets: directives };
    intent
        .check()
        .map_err(|msg| err(1, 1, ParseErrorKind::InvalidValue(msg)))?;
    Ok(intent)
}

fn scalar_value(entry: &MapEntry) -> Result<String, ParseError> {
    match &entry.value.value {
        Value::Scalar(s) => Ok(s.clone()),
        other => Err(err(
            entry.value.line,
            entry.value.col,
            ParseErrorKind::Malformed(format!("`{}` must be a scalar, got {}", entry.key, other.kind_name())),
        )),
    }
}

fn parse_directive(item: &Spanned) -> Result<TargetDirective, ParseError> {
    let entries = item.as_map().ok_or_else(|| {
        err(
            item.line,
            item.col,
            ParseErrorKind::Malformed(format!("target entry must be a mapping, got {}", item.value.kind_name())),
        )
    })?;

    let mut target_id = None;
    let mut operation = None;
    let mut operand = None;
    let mut oparams = ParamMap::new();
    let mut constraints = ParamMap::new();

    for entry in entries {
        match entry.key.as_str() {
            "id" => {
                let value = scalar_value(entry)?;
                target_id = Some(DomainId::new(value).map_err(|e| {
                    err(entry.value.line, entry.value.col, ParseErrorKind::InvalidValue(e.to_string()))
                })?);
            }
            "operation" => operation = Some(scalar_value(entry)?),
            "operand" => operand = Some(scalar_value(entry)?),
            "oparams" => oparams = parse_flat_map(entry)?,
            "constraints" => constraints = parse_flat_map(entry)?,
            other => {
                return Err(err(entry.key_line, entry.key_col, ParseErrorKind::UnknownKey(other.into())))
            }
        }
    }

    let target_id =
        target_id.ok_or_else(|| err(item.line, item.col, ParseErrorKind::MissingField("id")))?;
    let operation =
        operation.ok_or_else(|| err(item.line, item.col, ParseErrorKind::MissingField("operation")))?;
    let operand =
        operand.ok_or_else(|| err(item.line, item.col, ParseErrorKind::MissingField("operand")))?;

    Ok(TargetDirective { target_id, operation, operand, oparams, constraints })
}

fn parse_flat_map(entry: &MapEntry) -> Result<ParamMap, ParseError> {
    let mut map = ParamMap::new();
    match &entry.value.value {
        Value::Empty => Ok(map),
        Value::Map(entries) => {
            for e in entries {
                let value = scalar_value(e)?;
                map.insert(&e.key, &value).map_err(|me| {
                    err(e.key_line, e.key_col, ParseErrorKind::InvalidValue(me.to_string()))
                })?;
            }
            Ok(map)
        }
        other => Err(err(
            entry.value.line,
            entry.value.col,
            ParseErrorKind::Malformed(format!(
                "`{}` must be a flat scalar mapping, got {}",
                entry.key,
                other.kind_name()
            )),
        )),
    }
}

/// Emit the canonical text form: 2-space indentation, fixed field order,
/// empty maps omitted, operator origin and absent priority omitted.
/// `parse_intent(serialize_intent(i))` reproduces `i` exactly.
pub fn serialize_intent(intent: &Intent) -> String {
    debug_assert!(intent.check().is_ok(), "serialize_intent expects a valid intent");
    let mut out = String::new();
    out.push_str("intentid: ");
    out.push_str(&intent.intent_id);
    out.push('\n');
    if intent.origin != Origin::Operator {
        out.push_str(&format!("origin: {}\n", intent.origin));
    }
    if let Some(p) = intent.priority {
        out.push_str(&format!("priority: {p}\n"));
    }
    out.push_str("targets:\n");
    for d in &intent.targets {
        out.push_str(&format!("  - id: {}\n", d.target_id));
        out.push_str(&format!("    operation: {}\n", d.operation));
        out.push_str(&format!("    operand: {}\n", d.operand));
        for (name, map) in [("oparams", &d.oparams), ("constraints", &d.constraints)] {
            if !map.is_empty() {
                out.push_str(&format!("    {name}:\n"));
                for (k, v) in map.iter() {
                    out.push_str(&format!("      {k}: {v}\n"));
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Canonical interchange encoding
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("malformed intent payload: {0}")]
    Json(String),
    #[error("invalid intent: {0}")]
    Invalid(String),
}

/// Deterministic JSON bytes: declared field order, insertion-ordered maps,
/// empty maps and absent priority omitted. Byte equality implies structural
/// equality.
pub fn encode_canonical(intent: &Intent) -> Vec<u8> {
    serde_json::to_vec(intent).expect("intent serialization is infallible")
}

pub fn decode_canonical(bytes: &[u8]) -> Result<Intent, DecodeError> {
    let intent: Intent =
        serde_json::from_slice(bytes).map_err(|e| DecodeError::Json(e.to_string()))?;
    intent.check().map_err(DecodeError::Invalid)?;
    Ok(intent)
}
