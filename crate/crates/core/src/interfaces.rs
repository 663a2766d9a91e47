//! The two inter-orchestrator channels: a downward intent interface and an
//! upward monitoring interface.
//!
//! Every cross-domain message travels in an [`Envelope`]. The router enforces
//! the channel directions (intents go exactly one level down, monitoring
//! exactly one level up), per-pair FIFO with strictly increasing sequence
//! numbers, and a structural privacy boundary: payloads must decode exactly
//! to their declared schema and may not carry domain-internal keys.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::intent::DomainId;
use crate::kv::ParamMap;

// ---------------------------------------------------------------------------
// Topology
// ---------------------------------------------------------------------------

/// Declaration of one domain in a hierarchy: its id, parent, and rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainDecl {
    pub id: DomainId,
    pub parent: Option<DomainId>,
    pub rank: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("duplicate domain `{0}`")]
    DuplicateDomain(DomainId),
    #[error("domain `{0}` has rank {1} but no parent; only rank 0 may be a root")]
    RootRank(DomainId, u32),
    #[error("domain `{0}` names unknown parent `{1}`")]
    UnknownParent(DomainId, DomainId),
    #[error("domain `{0}` has rank {1}, expected parent rank + 1 = {2}")]
    RankMismatch(DomainId, u32, u32),
    #[error("topology must have exactly one root, found {0}")]
    RootCount(usize),
}

#[derive(Debug, Clone)]
struct TopoEntry {
    parent: Option<DomainId>,
    rank: u32,
    children: BTreeSet<DomainId>,
}

/// A rooted tree of domains. Ranks equal depth; rank 0 is the root.
#[derive(Debug, Clone)]
pub struct Topology {
    entries: BTreeMap<DomainId, TopoEntry>,
    root: DomainId,
}

impl Topology {
    pub fn build(decls: &[DomainDecl]) -> Result<Self, TopologyError> {
        let mut entries: BTreeMap<DomainId, TopoEntry> = BTreeMap::new();
        for d in decls {
            if entries.contains_key(&d.id) {
                return Err(TopologyError::DuplicateDomain(d.id.clone()));
            }
            if d.parent.is_none() && d.rank != 0 {
                return Err(TopologyError::RootRank(d.id.clone(), d.rank));
            }
            entries.insert(
                d.id.clone(),
                TopoEntry { parent: d.parent.clone(), rank: d.rank, children: BTreeSet::new() },
            );
        }
        let roots: Vec<DomainId> = decls
            .iter()
            .filter(|d| d.parent.is_none())
            .map(|d| d.id.clone())
            .collect();
        if roots.len() != 1 {
            return Err(TopologyError::RootCount(roots.len()));
        }
        for d in decls {
            if let Some(parent) = &d.parent {
                let parent_rank = entries
                    .get(parent)
                    .ok_or_else(|| TopologyError::UnknownParent(d.id.clone(), parent.clone()))?
                    .rank;
                if d.rank != parent_rank + 1 {
                    return Err(TopologyError::RankMismatch(d.id.clone(), d.rank, parent_rank + 1));
                }
            }
        }
        let child_links: Vec<(DomainId, DomainId)> = decls
            .iter()
            .filter_map(|d| d.parent.clone().map(|p| (p, d.id.clone())))
            .collect();
        for (parent, child) in child_links {
            entries.get_mut(&parent).unwrap().children.insert(child);
        }
        Ok(Topology { entries, root: roots.into_iter().next().unwrap() })
    }

    pub fn root(&self) -> &DomainId {
        &self.root
    }

    pub fn contains(&self, d: &DomainId) -> bool {
        self.entries.contains_key(d)
    }

    pub fn domains(&self) -> impl Iterator<Item = &DomainId> {
        self.entries.keys()
    }

    pub fn domain_set(&self) -> BTreeSet<DomainId> {
        self.entries.keys().cloned().collect()
    }

    pub fn rank_of(&self, d: &DomainId) -> Option<u32> {
        self.entries.get(d).map(|e| e.rank)
    }

    pub fn parent_of(&self, d: &DomainId) -> Option<&DomainId> {
        self.entries.get(d).and_then(|e| e.parent.as_ref())
    }

    pub fn children_of(&self, d: &DomainId) -> BTreeSet<DomainId> {
        self.entries.get(d).map(|e| e.children.clone()).unwrap_or_default()
    }

    pub fn is_child_of(&self, child: &DomainId, parent: &DomainId) -> bool {
        self.parent_of(child) == Some(parent)
    }

    /// Ranks of every ancestor of `d`, root included.
    pub fn ancestor_ranks(&self, d: &DomainId) -> BTreeMap<DomainId, u32> {
        let mut out = BTreeMap::new();
        let mut cur = self.parent_of(d);
        while let Some(p) = cur {
            out.insert(p.clone(), self.rank_of(p).unwrap());
            cur = self.parent_of(p);
        }
        out
    }

    /// For each strict descendant of `d`, the child of `d` through which it
    /// is reached.
    pub fn routes_from(&self, d: &DomainId) -> BTreeMap<DomainId, DomainId> {
        let mut out = BTreeMap::new();
        for child in self.children_of(d) {
            let mut stack = vec![child.clone()];
            while let Some(n) = stack.pop() {
                if n != child {
                    out.insert(n.clone(), child.clone());
                }
                stack.extend(self.children_of(&n));
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Monitoring payloads
// ---------------------------------------------------------------------------

/// Periodic performance statistics sent up the hierarchy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitoringReport {
    pub sender: DomainId,
    pub at: u64,
    pub metrics: ParamMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitoringEventKind {
    ThresholdCrossover,
    PolicyViolation,
    Failure,
    SecurityViolation,
    RedeploymentNotice,
}

impl MonitoringEventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MonitoringEventKind::ThresholdCrossover => "threshold_crossover",
            MonitoringEventKind::PolicyViolation => "policy_violation",
            MonitoringEventKind::Failure => "failure",
            MonitoringEventKind::SecurityViolation => "security_violation",
            MonitoringEventKind::RedeploymentNotice => "redeployment_notice",
        }
    }
}

impl fmt::Display for MonitoringEventKind {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Asynchronous event sent up the hierarchy (or consumed locally when raised
/// by a domain's own pipelines).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitoringEvent {
    pub sender: DomainId,
    pub at: u64,
    pub kind: MonitoringEventKind,
    pub attrs: ParamMap,
}

impl MonitoringEvent {
    pub fn new(sender: DomainId, at: u64, kind: MonitoringEventKind) -> Self {
        MonitoringEvent { sender, at, kind, attrs: ParamMap::new() }
    }

    pub fn with_attr(mut self, key: &str, value: &str) -> Self {
        self.attrs.insert(key, value).expect("valid attr");
        self
    }

    pub fn redeployment_notice(sender: DomainId, at: u64, pipeline_id: &str) -> Self {
        MonitoringEvent::new(sender, at, MonitoringEventKind::RedeploymentNotice)
            .with_attr("pipeline_id", pipeline_id)
    }

    pub fn check(&self) -> Result<(), String> {
        if self.kind == MonitoringEventKind::RedeploymentNotice
            && self.attrs.get("pipeline_id").is_none()
        {
            return Err("redeployment_notice requires attrs.pipeline_id".into());
        }
        Ok(())
    }
}

/// Either monitoring payload, as carried upward and handed to an actor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MonitoringMsg {
    Report(MonitoringReport),
    Event(MonitoringEvent),
}

impl MonitoringMsg {
    pub fn kind(&self) -> MsgKind {
        match self {
            MonitoringMsg::Report(_) => MsgKind::MonitoringReport,
            MonitoringMsg::Event(_) => MsgKind::MonitoringEvent,
        }
    }

    pub fn sender(&self) -> &DomainId {
        match self {
            MonitoringMsg::Report(r) => &r.sender,
            MonitoringMsg::Event(e) => &e.sender,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            MonitoringMsg::Report(r) => serde_json::to_vec(r).expect("report serialization"),
            MonitoringMsg::Event(e) => serde_json::to_vec(e).expect("event serialization"),
        }
    }
}

// ---------------------------------------------------------------------------
// Envelope and wire codec
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsgKind {
    Intent,
    MonitoringReport,
    MonitoringEvent,
}

impl MsgKind {
    pub fn is_monitoring(self) -> bool {
        !matches!(self, MsgKind::Intent)
    }
}

/// Cross-domain message wrapper. `payload` holds the canonical JSON bytes of
/// the inner value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub seq: u64,
    pub sender: DomainId,
    pub recipient: DomainId,
    pub kind: MsgKind,
    pub payload: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct WireEnvelope<'a> {
    seq: u64,
    sender: DomainId,
    recipient: DomainId,
    kind: MsgKind,
    #[serde(borrow)]
    payload: &'a RawValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("byte {offset}: {message}")]
pub struct WireDecodeError {
    pub offset: usize,
    pub message: String,
}

/// One envelope per line: a single JSON object terminated by a newline; the
/// payload bytes are embedded verbatim.
pub fn encode_envelope(env: &Envelope) -> Vec<u8> {
    let payload_text =
        std::str::from_utf8(&env.payload).expect("canonical payload bytes are UTF-8");
    let raw = RawValue::from_string(payload_text.to_string()).expect("payload bytes are JSON");
    let wire = WireEnvelope {
        seq: env.seq,
        sender: env.sender.clone(),
        recipient: env.recipient.clone(),
        kind: env.kind,
        payload: &raw,
    };
    let mut bytes = serde_json::to_vec(&wire).expect("envelope serialization");
    bytes.push(b'\n');
    bytes
}

pub fn decode_envelope(bytes: &[u8]) -> Result<Envelope, WireDecodeError> {
    let line = std::str::from_utf8(bytes)
        .map_err(|e| WireDecodeError { offset: e.valid_up_to(), message: "invalid UTF-8".into() })?
        .trim_end_matches('\n');
    let wire: WireEnvelope = serde_json::from_str(line).map_err(|e| WireDecodeError {
        offset: e.column().saturating_sub(1),
        message: e.to_string(),
    })?;
    Ok(Envelope {
        seq: wire.seq,
        sender: wire.sender,
        recipient: wire.recipient,
        kind: wire.kind,
        payload: wire.payload.get().as_bytes().to_vec(),
    })
}

// ---------------------------------------------------------------------------
// Privacy boundary
// ---------------------------------------------------------------------------

/// Keys that would leak a domain's internals across the boundary. The single
/// exception is `pipeline_id` inside the attrs of a redeployment notice.
pub const FORBIDDEN_KEYS: [&str; 7] = [
    "nodes",
    "model_ref",
    "catalog",
    "pipeline_catalog",
    "topology",
    "placement",
    "pipeline_id",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PrivacyError {
    #[error("payload is not valid JSON: {0}")]
    Malformed(String),
    #[error("payload carries internal key `{0}`")]
    ForbiddenKey(String),
    #[error("unexpected field `{0}`")]
    UnexpectedField(String),
    #[error("missing required field `{0}`")]
    MissingField(String),
    #[error("field `{0}` has the wrong shape: {1}")]
    WrongShape(String, String),
}

/// Accept a payload iff it decodes exactly to the declared schema for its
/// kind, with no extra fields and no forbidden keys at any depth.
pub fn privacy_filter(payload: &[u8], kind: MsgKind) -> Result<(), PrivacyError> {
    let value: serde_json::Value =
        serde_json::from_slice(payload).map_err(|e| PrivacyError::Malformed(e.to_string()))?;

    let notice = kind == MsgKind::MonitoringEvent
        && value.get("kind").and_then(|k| k.as_str()) == Some("redeployment_notice");
    walk_forbidden(&value, &mut Vec::new(), notice)?;

    match kind {
        MsgKind::Intent => check_intent_schema(&value),
        MsgKind::MonitoringReport => {
            check_object_schema(&value, &["sender", "at", "metrics"], &["sender", "at", "metrics"])?;
            check_flat_string_map(value.get("metrics").unwrap(), "metrics")
        }
        MsgKind::MonitoringEvent => {
            check_object_schema(&value, &["sender", "at", "kind", "attrs"], &["sender", "at", "kind", "attrs"])?;
            let kind_str = value
                .get("kind")
                .and_then(|k| k.as_str())
                .ok_or_else(|| PrivacyError::WrongShape("kind".into(), "must be a string".into()))?;
            let known = ["threshold_crossover", "policy_violation", "failure", "security_violation", "redeployment_notice"];
            if !known.contains(&kind_str) {
                return Err(PrivacyError::WrongShape("kind".into(), format!("unknown event kind `{kind_str}`")));
            }
            check_flat_string_map(value.get("attrs").unwrap(), "attrs")?;
            if kind_str == "redeployment_notice"
                && value.get("attrs").and_then(|a| a.get("pipeline_id")).is_none()
            {
                return Err(PrivacyError::MissingField("attrs.pipeline_id".into()));
            }
            Ok(())
        }
    }
}

fn walk_forbidden(
    value: &serde_json::Value,
    path: &mut Vec<String>,
    notice: bool,
) -> Result<(), PrivacyError> {
    match value {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                let allowed_exception =
                    notice && k == "pipeline_id" && path.as_slice() == ["attrs"];
                if FORBIDDEN_KEYS.contains(&k.as_str()) && !allowed_exception {
                    return Err(PrivacyError::ForbiddenKey(k.clone()));
                }
                path.push(k.clone());
                walk_forbidden(v, path, notice)?;
                path.pop();
            }
            Ok(())
        }
        serde_json::Value::Array(items) => {
            for item in items {
                walk_forbidden(item, path, notice)?;
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

fn check_object_schema(
    value: &serde_json::Value,
    allowed: &[&str],
    required: &[&str],
) -> Result<(), PrivacyError> {
    let obj = value
        .as_object()
        .ok_or_else(|| PrivacyError::WrongShape("payload".into(), "must be an object".into()))?;
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(PrivacyError::UnexpectedField(key.clone()));
        }
    }
    for key in required {
        if !obj.contains_key(*key) {
            return Err(PrivacyError::MissingField((*key).into()));
        }
    }
    Ok(())
}

fn check_flat_string_map(value: &serde_json::Value, field: &str) -> Result<(), PrivacyError> {
    let obj = value
        .as_object()
        .ok_or_else(|| PrivacyError::WrongShape(field.into(), "must be an object".into()))?;
    for (k, v) in obj {
        if !v.is_string() {
            return Err(PrivacyError::WrongShape(
                format!("{field}.{k}"),
                "must be a scalar string".into(),
            ));
        }
    }
    Ok(())
}

fn check_intent_schema(value: &serde_json::Value) -> Result<(), PrivacyError> {
    check_object_schema(value, &["intentid", "origin", "priority", "targets"], &["intentid", "origin", "targets"])?;
    let targets = value
        .get("targets")
        .unwrap()
        .as_array()
        .ok_or_else(|| PrivacyError::WrongShape("targets".into(), "must be an array".into()))?;
    if targets.is_empty() {
        return Err(PrivacyError::WrongShape("targets".into(), "must be non-empty".into()));
    }
    for (i, t) in targets.iter().enumerate() {
        check_object_schema(
            t,
            &["id", "operation", "operand", "oparams", "constraints"],
            &["id", "operation", "operand"],
        )
        .map_err(|e| match e {
            PrivacyError::UnexpectedField(f) => PrivacyError::UnexpectedField(format!("targets[{i}].{f}")),
            PrivacyError::MissingField(f) => PrivacyError::MissingField(format!("targets[{i}].{f}")),
            other => other,
        })?;
        for map_field in ["oparams", "constraints"] {
            if let Some(m) = t.get(map_field) {
                check_flat_string_map(m, map_field)?;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Routing and delivery
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DirectionError {
    #[error("intent from `{sender}` to `{recipient}` does not go one level down")]
    IntentNotDownward { sender: DomainId, recipient: DomainId },
    #[error("monitoring from `{sender}` to `{recipient}` does not go one level up")]
    MonitoringNotUpward { sender: DomainId, recipient: DomainId },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SendError {
    #[error(transparent)]
    Direction(#[from] DirectionError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error("unknown domain `{0}`")]
    UnknownDomain(DomainId),
    #[error("sequence number {got} for {sender}->{recipient} does not increase past {last}")]
    OutOfOrder { sender: DomainId, recipient: DomainId, got: u64, last: u64 },
}

/// Receipt for an accepted envelope.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub recipient: DomainId,
    pub seq: u64,
}

/// Direction rule shared by the simulated router and the live transport:
/// intents go parent→child, monitoring goes child→parent.
pub fn check_direction(topology: &Topology, env: &Envelope) -> Result<(), SendError> {
    if !topology.contains(&env.sender) {
        return Err(SendError::UnknownDomain(env.sender.clone()));
    }
    if !topology.contains(&env.recipient) {
        return Err(SendError::UnknownDomain(env.recipient.clone()));
    }
    match env.kind {
        MsgKind::Intent => {
            if !topology.is_child_of(&env.recipient, &env.sender) {
                return Err(DirectionError::IntentNotDownward {
                    sender: env.sender.clone(),
                    recipient: env.recipient.clone(),
                }
                .into());
            }
        }
        MsgKind::MonitoringReport | MsgKind::MonitoringEvent => {
            if !topology.is_child_of(&env.sender, &env.recipient) {
                return Err(DirectionError::MonitoringNotUpward {
                    sender: env.sender.clone(),
                    recipient: env.recipient.clone(),
                }
                .into());
            }
        }
    }
    Ok(())
}

/// Reliable in-process transport: validates every envelope and queues it on
/// the recipient's inbox in FIFO order per (sender, recipient) pair.
#[derive(Debug, Clone)]
pub struct Router {
    topology: Topology,
    inboxes: BTreeMap<DomainId, VecDeque<Envelope>>,
    last_seq: BTreeMap<(DomainId, DomainId), u64>,
}

impl Router {
    pub fn new(topology: Topology) -> Self {
        let inboxes = topology.domains().map(|d| (d.clone(), VecDeque::new())).collect();
        Router { topology, inboxes, last_seq: BTreeMap::new() }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    /// Next sequence number the given sender should stamp for the recipient.
    pub fn next_seq(&self, sender: &DomainId, recipient: &DomainId) -> u64 {
        self.last_seq
            .get(&(sender.clone(), recipient.clone()))
            .copied()
            .unwrap_or(0)
            + 1
    }

    pub fn send(&mut self, env: Envelope) -> Result<Delivery, SendError> {
        check_direction(&self.topology, &env)?;
        privacy_filter(&env.payload, env.kind)?;
        let key = (env.sender.clone(), env.recipient.clone());
        let last = self.last_seq.get(&key).copied().unwrap_or(0);
        if env.seq <= last {
            return Err(SendError::OutOfOrder {
                sender: env.sender.clone(),
                recipient: env.recipient.clone(),
                got: env.seq,
                last,
            });
        }
        self.last_seq.insert(key, env.seq);
        let delivery = Delivery { recipient: env.recipient.clone(), seq: env.seq };
        self.inboxes
            .get_mut(&env.recipient)
            .expect("recipient existence checked")
            .push_back(env);
        Ok(delivery)
    }

    /// Pop the oldest queued envelope for a domain.
    pub fn take_next(&mut self, domain: &DomainId) -> Option<Envelope> {
        self.inboxes.get_mut(domain).and_then(|q| q.pop_front())
    }

    pub fn pending(&self, domain: &DomainId) -> usize {
        self.inboxes.get(domain).map(|q| q.len()).unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intent::{encode_canonical, parse_intent};
    use crate::samples;

    fn dom(s: &str) -> DomainId {
        DomainId::new(s).unwrap()
    }

    pub(crate) fn three_level() -> Topology {
        Topology::build(&[
            DomainDecl { id: dom("OSS-01"), parent: None, rank: 0 },
            DomainDecl { id: dom("Edge-smart-factory-01"), parent: Some(dom("OSS-01")), rank: 1 },
            DomainDecl { id: dom("Factory-01"), parent: Some(dom("Edge-smart-factory-01")), rank: 2 },
        ])
        .unwrap()
    }

    fn intent_env(sender: &str, recipient: &str, seq: u64) -> Envelope {
        Envelope {
            seq,
            sender: dom(sender),
            recipient: dom(recipient),
            kind: MsgKind::Intent,
            payload: encode_canonical(&parse_intent(samples::INTENT_B_TEXT).unwrap()),
        }
    }

    #[test]
    fn topology_rejects_bad_shapes() {
        let err = Topology::build(&[
            DomainDecl { id: dom("A"), parent: None, rank: 0 },
            DomainDecl { id: dom("B"), parent: Some(dom("A")), rank: 2 },
        ])
        .unwrap_err();
        assert!(matches!(err, TopologyError::RankMismatch(_, 2, 1)));

        let err = Topology::build(&[
            DomainDecl { id: dom("A"), parent: None, rank: 0 },
            DomainDecl { id: dom("B"), parent: None, rank: 0 },
        ])
        .unwrap_err();
        assert!(matches!(err, TopologyError::RootCount(2)));
    }

    #[test]
    fn intent_downward_is_delivered() {
        let mut router = Router::new(three_level());
        let env = intent_env("OSS-01", "Edge-smart-factory-01", 1);
        let delivery = router.send(env).unwrap();
        assert_eq!(delivery.recipient, dom("Edge-smart-factory-01"));
        assert_eq!(router.pending(&dom("Edge-smart-factory-01")), 1);
    }

    #[test]
    fn upward_or_lateral_intent_is_rejected() {
        let mut router = Router::new(three_level());
        let up = intent_env("Factory-01", "OSS-01", 1);
        assert!(matches!(
            router.send(up),
            Err(SendError::Direction(DirectionError::IntentNotDownward { .. }))
        ));
        // Skipping a level is also rejected: one hop per level.
        let skip = intent_env("OSS-01", "Factory-01", 1);
        assert!(matches!(router.send(skip), Err(SendError::Direction(_))));
    }

    #[test]
    fn monitoring_upward_is_delivered_downward_rejected() {
        let mut router = Router::new(three_level());
        let notice =
            MonitoringEvent::redeployment_notice(dom("Factory-01"), 7, "factory-inference-01");
        let env = Envelope {
            seq: 1,
            sender: dom("Factory-01"),
            recipient: dom("Edge-smart-factory-01"),
            kind: MsgKind::MonitoringEvent,
            payload: serde_json::to_vec(&notice).unwrap(),
        };
        router.send(env.clone()).unwrap();

        let mut down = env;
        down.sender = dom("Edge-smart-factory-01");
        down.recipient = dom("Factory-01");
        assert!(matches!(
            router.send(down),
            Err(SendError::Direction(DirectionError::MonitoringNotUpward { .. }))
        ));
    }

    #[test]
    fn sequence_numbers_must_increase() {
        let mut router = Router::new(three_level());
        router.send(intent_env("OSS-01", "Edge-smart-factory-01", 1)).unwrap();
        let replay = intent_env("OSS-01", "Edge-smart-factory-01", 1);
        assert!(matches!(router.send(replay), Err(SendError::OutOfOrder { .. })));
    }

    #[test]
    fn fifo_per_channel() {
        let mut router = Router::new(three_level());
        for seq in 1..=3 {
            router.send(intent_env("OSS-01", "Edge-smart-factory-01", seq)).unwrap();
        }
        let seqs: Vec<u64> = std::iter::from_fn(|| router.take_next(&dom("Edge-smart-factory-01")))
            .map(|e| e.seq)
            .collect();
        assert_eq!(seqs, vec![1, 2, 3]);
    }

    #[test]
    fn privacy_passes_canonical_payloads() {
        let intent = parse_intent(samples::INTENT_C_TEXT).unwrap();
        privacy_filter(&encode_canonical(&intent), MsgKind::Intent).unwrap();

        let report = MonitoringReport {
            sender: dom("Factory-01"),
            at: 3,
            metrics: ParamMap::from_pairs([
                ("model_accuracy", "0.97"),
                ("resource_utilisation", "0.41"),
                ("available_resources", "high"),
            ])
            .unwrap(),
        };
        privacy_filter(&serde_json::to_vec(&report).unwrap(), MsgKind::MonitoringReport).unwrap();
    }

    #[test]
    fn privacy_rejects_injected_internal_field() {
        let intent = parse_intent(samples::INTENT_C_TEXT).unwrap();
        let mut value: serde_json::Value =
            serde_json::from_slice(&encode_canonical(&intent)).unwrap();
        value.as_object_mut().unwrap().insert("model_ref".into(), "secret-model".into());
        let err = privacy_filter(&serde_json::to_vec(&value).unwrap(), MsgKind::Intent).unwrap_err();
        assert_eq!(err, PrivacyError::ForbiddenKey("model_ref".into()));
    }

    #[test]
    fn privacy_rejects_forbidden_keys_in_nested_maps() {
        let intent = parse_intent(samples::INTENT_A_TEXT).unwrap();
        let mut value: serde_json::Value =
            serde_json::from_slice(&encode_canonical(&intent)).unwrap();
        value["targets"][0]["oparams"]
            .as_object_mut()
            .unwrap()
            .insert("placement".into(), "rack-4".into());
        let err = privacy_filter(&serde_json::to_vec(&value).unwrap(), MsgKind::Intent).unwrap_err();
        assert_eq!(err, PrivacyError::ForbiddenKey("placement".into()));
    }

    #[test]
    fn redeployment_notice_may_carry_pipeline_id_others_may_not() {
        let notice = MonitoringEvent::redeployment_notice(dom("Factory-01"), 2, "p1");
        privacy_filter(&serde_json::to_vec(&notice).unwrap(), MsgKind::MonitoringEvent).unwrap();

        let leak = MonitoringEvent::new(dom("Factory-01"), 2, MonitoringEventKind::Failure)
            .with_attr("pipeline_id", "p1");
        let err =
            privacy_filter(&serde_json::to_vec(&leak).unwrap(), MsgKind::MonitoringEvent).unwrap_err();
        assert_eq!(err, PrivacyError::ForbiddenKey("pipeline_id".into()));
    }

    #[test]
    fn envelope_codec_round_trips_deterministically() {
        let env = intent_env("OSS-01", "Edge-smart-factory-01", 5);
        let a = encode_envelope(&env);
        let b = encode_envelope(&env);
        assert_eq!(a, b);
        assert_eq!(a.last(), Some(&b'\n'));
        assert_eq!(decode_envelope(&a).unwrap(), env);
    }

    #[test]
    fn envelope_decode_reports_missing_field_and_offset() {
        let err = decode_envelope(br#"{"sender":"A","recipient":"B","kind":"intent","payload":{}}"#)
            .unwrap_err();
        assert!(err.message.contains("seq"));

        let err = decode_envelope(b"{\"seq\":1,").unwrap_err();
        assert!(err.offset > 0);
    }
}
