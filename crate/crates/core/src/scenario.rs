//! Scenario definitions: the domain hierarchy, pipeline catalogs, initial
//! placements, derivation rules, conflict policies, and timed stimuli that a
//! simulation run executes.
//!
//! Scenarios load from text files in the same indented syntax family as
//! intent documents, with top-level sections `seed`, `topology`, `catalogs`,
//! `initial_pipelines`, `rules`, `policies`, `failures`, and `stimuli`.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::intent::{self, DomainId, Intent, Origin, Vocabulary};
use crate::interfaces::{DomainDecl, MonitoringEventKind, Topology, TopologyError};
use crate::itf::{self, MapEntry, Spanned, Value};
use crate::kv::ParamMap;
use crate::node::{
    ConflictPolicy, DerivationRule, DirectiveTemplate, IntentTemplate, MlfoNode, RuleEmit,
    RuleTrigger,
};
use crate::pipeline::{NodeKind, PipelineInstance, PipelineSpec, PipelineState};

/// The builtin smart-factory scenario text.
pub const SMART_FACTORY_TEXT: &str = include_str!("../data/smart_factory.yaml");

/// An injected input at a point in logical time.
#[derive(Debug, Clone, PartialEq)]
pub enum Stimulus {
    /// The operator hands an intent to the root orchestrator.
    OperatorIntent { to: DomainId, intent: Intent },
    /// Load surge by public users; running prediction pipelines react.
    PublicUserSurge { expected_drop: String },
    /// A domain pushes a periodic report up to its parent.
    ChildReport { from: DomainId, metrics: ParamMap },
    /// A domain pushes an asynchronous event up to its parent.
    ChildEvent { from: DomainId, kind: MonitoringEventKind, attrs: ParamMap },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub topology: Vec<DomainDecl>,
    pub catalogs: BTreeMap<DomainId, Vec<PipelineSpec>>,
    pub initial_pipelines: Vec<PipelineInstance>,
    pub rules: BTreeMap<DomainId, Vec<DerivationRule>>,
    pub policies: BTreeMap<DomainId, ConflictPolicy>,
    pub stimuli: Vec<(u64, Stimulus)>,
    pub strict_vocab: bool,
    /// Pipeline ids whose deployments fail instead of reaching running.
    pub failing_deploys: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("line {line}, column {col}: {message}")]
    Parse { line: usize, col: usize, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

impl From<itf::ItfError> for ScenarioError {
    fn from(e: itf::ItfError) -> Self {
        ScenarioError::Parse { line: e.line, col: e.col, message: e.kind.to_string() }
    }
}

impl From<TopologyError> for ScenarioError {
    fn from(e: TopologyError) -> Self {
        ScenarioError::Invalid(e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

fn parse_err(node: &Spanned, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse { line: node.line, col: node.col, message: message.into() }
}

impl Scenario {
    pub fn empty() -> Self {
        Scenario {
            seed: 0,
            topology: Vec::new(),
            catalogs: BTreeMap::new(),
            initial_pipelines: Vec::new(),
            rules: BTreeMap::new(),
            policies: BTreeMap::new(),
            stimuli: Vec::new(),
            strict_vocab: false,
            failing_deploys: BTreeSet::new(),
        }
    }

    /// The builtin three-domain smart-factory scenario: an operator intent at
    /// t=0 and a public-user surge at t=5, with two factory-owned inference
    /// pipelines initially offloaded to the edge.
    pub fn smart_factory() -> Self {
        Scenario::from_text(SMART_FACTORY_TEXT).expect("builtin scenario is valid")
    }

    pub fn from_text(text: &str) -> Result<Self, ScenarioError> {
        let root = itf::parse(text)?;
        let entries = root
            .as_map()
            .ok_or_else(|| parse_err(&root, "scenario must be a mapping"))?;
        let mut scenario = Scenario::empty();
        for entry in entries {
            match entry.key.as_str() {
                "seed" => scenario.seed = scalar_u64(entry)?,
                "strict_vocab" => scenario.strict_vocab = scalar_bool(entry)?,
                "topology" => scenario.topology = parse_topology(&entry.value)?,
                "catalogs" => scenario.catalogs = parse_catalogs(&entry.value)?,
                "initial_pipelines" => {
                    scenario.initial_pipelines = parse_initial_pipelines(&entry.value)?
                }
                "rules" => scenario.rules = parse_rules(&entry.value)?,
                "policies" => scenario.policies = parse_policies(&entry.value)?,
                "failures" => scenario.failing_deploys = parse_failures(&entry.value)?,
                "stimuli" => scenario.stimuli = parse_stimuli(&entry.value)?,
                other => {
                    return Err(ScenarioError::Parse {
                        line: entry.key_line,
                        col: entry.key_col,
                        message: format!("unknown section `{other}`"),
                    })
                }
            }
        }
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn build_topology(&self) -> Result<Topology, ScenarioError> {
        Ok(Topology::build(&self.topology)?)
    }

    /// Structural checks beyond what parsing enforces.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let topology = self.build_topology()?;

        let mut seen_ids = BTreeSet::new();
        for p in &self.initial_pipelines {
            if !topology.contains(&p.placement) {
                return Err(invalid(format!(
                    "pipeline `{}` placed in unknown domain `{}`",
                    p.pipeline_id(),
                    p.placement
                )));
            }
            if !topology.contains(&p.spec.owner_domain) {
                return Err(invalid(format!(
                    "pipeline `{}` owned by unknown domain `{}`",
                    p.pipeline_id(),
                    p.spec.owner_domain
                )));
            }
            if !matches!(p.state, PipelineState::Running | PipelineState::Requested) {
                return Err(invalid(format!(
                    "pipeline `{}` must start running or requested, not {}",
                    p.pipeline_id(),
                    p.state
                )));
            }
            p.spec.check().map_err(|e| invalid(e.to_string()))?;
            if !seen_ids.insert(p.pipeline_id().to_string()) {
                return Err(invalid(format!("duplicate initial pipeline id `{}`", p.pipeline_id())));
            }
        }

        for (domain, specs) in &self.catalogs {
            if !topology.contains(domain) {
                return Err(invalid(format!("catalog for unknown domain `{domain}`")));
            }
            for spec in specs {
                spec.check().map_err(|e| invalid(e.to_string()))?;
                if spec.owner_domain != *domain {
                    return Err(invalid(format!(
                        "catalog entry `{}` must be owned by `{domain}`",
                        spec.pipeline_id
                    )));
                }
            }
        }

        for (domain, rules) in &self.rules {
            if !topology.contains(domain) {
                return Err(invalid(format!("rules for unknown domain `{domain}`")));
            }
            let children = topology.children_of(domain);
            for rule in rules {
                match &rule.emit {
                    RuleEmit::ChildIntent { to, .. } => {
                        if !children.contains(to) {
                            return Err(invalid(format!(
                                "rule `{}` at `{domain}` emits to `{to}`, which is not a child",
                                rule.rule_id
                            )));
                        }
                    }
                    RuleEmit::ParentEvent { .. } => {
                        if topology.parent_of(domain).is_none() {
                            return Err(invalid(format!(
                                "rule `{}` at root `{domain}` cannot emit upward",
                                rule.rule_id
                            )));
                        }
                    }
                }
            }
        }

        for domain in self.policies.keys() {
            if !topology.contains(domain) {
                return Err(invalid(format!("policy for unknown domain `{domain}`")));
            }
        }

        let mut last_t = 0;
        for (t, stimulus) in &self.stimuli {
            if *t < last_t {
                return Err(invalid("stimuli times must be non-decreasing".to_string()));
            }
            last_t = *t;
            match stimulus {
                Stimulus::OperatorIntent { to, intent } => {
                    if to != topology.root() {
                        return Err(invalid(format!(
                            "operator intent `{}` must enter at the root, not `{to}`",
                            intent.intent_id
                        )));
                    }
                    if intent.origin != Origin::Operator {
                        return Err(invalid(format!(
                            "operator intent `{}` must carry the operator origin",
                            intent.intent_id
                        )));
                    }
                    intent.check().map_err(invalid)?;
                }
                Stimulus::ChildReport { from, .. } | Stimulus::ChildEvent { from, .. } => {
                    if topology.parent_of(from).is_none() {
                        return Err(invalid(format!(
                            "monitoring stimulus from `{from}` needs a parent domain"
                        )));
                    }
                }
                Stimulus::PublicUserSurge { .. } => {}
            }
        }
        Ok(())
    }

    /// Instantiate one actor per domain, wired with its catalog, rules,
    /// policy, routes, and initial pipelines. Offloaded running instances are
    /// also registered with their owner, which tracks them for repatriation.
    pub fn build_nodes(&self, topology: &Topology) -> BTreeMap<DomainId, MlfoNode> {
        let mut nodes = BTreeMap::new();
        for domain in topology.domains() {
            let rank = topology.rank_of(domain).unwrap();
            let parent = topology.parent_of(domain).cloned();
            let mut node =
                MlfoNode::new(domain.clone(), rank, parent).with_children(topology.children_of(domain));
            node.set_routes(topology.routes_from(domain));
            node.set_ancestor_ranks(topology.ancestor_ranks(domain));
            node.catalog = self.catalogs.get(domain).cloned().unwrap_or_default();
            node.rules = self.rules.get(domain).cloned().unwrap_or_default();
            node.policy = self.policies.get(domain).cloned().unwrap_or_default();
            node.vocab = Vocabulary::new(self.strict_vocab);
            nodes.insert(domain.clone(), node);
        }
        for instance in &self.initial_pipelines {
            nodes
                .get_mut(&instance.placement)
                .expect("placement validated")
                .pipelines
                .push(instance.clone());
            if instance.is_offloaded() && instance.state == PipelineState::Running {
                nodes
                    .get_mut(&instance.spec.owner_domain)
                    .expect("owner validated")
                    .pipelines
                    .push(instance.clone());
            }
        }
        nodes
    }
}

// ---------------------------------------------------------------------------
// Section interpreters
// ---------------------------------------------------------------------------

fn scalar(entry: &MapEntry) -> Result<String, ScenarioError> {
    entry
        .value
        .as_scalar()
        .map(|s| s.to_string())
        .ok_or_else(|| parse_err(&entry.value, format!("`{}` must be a scalar", entry.key)))
}

fn scalar_u64(entry: &MapEntry) -> Result<u64, ScenarioError> {
    let s = scalar(entry)?;
    s.parse()
        .map_err(|_| parse_err(&entry.value, format!("`{}` must be an integer, got `{s}`", entry.key)))
}

fn scalar_bool(entry: &MapEntry) -> Result<bool, ScenarioError> {
    let s = scalar(entry)?;
    match s.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(parse_err(&entry.value, format!("`{}` must be true or false, got `{other}`", entry.key))),
    }
}

fn domain(text: &str, node: &Spanned) -> Result<DomainId, ScenarioError> {
    DomainId::new(text).map_err(|e| parse_err(node, e.to_string()))
}

fn seq_of_maps(node: &Spanned, what: &str) -> Result<Vec<Spanned>, ScenarioError> {
    match &node.value {
        Value::Seq(items) => Ok(items.clone()),
        Value::Empty => Ok(Vec::new()),
        other => Err(parse_err(node, format!("{what} must be a sequence, got {}", other.kind_name()))),
    }
}

fn flat_map(node: &Spanned, what: &str) -> Result<ParamMap, ScenarioError> {
    let mut out = ParamMap::new();
    match &node.value {
        Value::Empty => Ok(out),
        Value::Map(entries) => {
            for e in entries {
                let v = scalar(e)?;
                out.insert(&e.key, &v).map_err(|err| parse_err(&e.value, err.to_string()))?;
            }
            Ok(out)
        }
        other => Err(parse_err(node, format!("{what} must be a flat mapping, got {}", other.kind_name()))),
    }
}

fn parse_topology(node: &Spanned) -> Result<Vec<DomainDecl>, ScenarioError> {
    let mut decls = Vec::new();
    for item in seq_of_maps(node, "topology")? {
        let entries = item
            .as_map()
            .ok_or_else(|| parse_err(&item, "topology entry must be a mapping"))?;
        let mut id = None;
        let mut parent = None;
        let mut rank = None;
        for e in entries {
            match e.key.as_str() {
                "domain" => id = Some(domain(&scalar(e)?, &e.value)?),
                "parent" => parent = Some(domain(&scalar(e)?, &e.value)?),
                "rank" => rank = Some(scalar_u64(e)? as u32),
                other => return Err(parse_err(&item, format!("unknown topology key `{other}`"))),
            }
        }
        decls.push(DomainDecl {
            id: id.ok_or_else(|| parse_err(&item, "topology entry needs `domain`"))?,
            parent,
            rank: rank.ok_or_else(|| parse_err(&item, "topology entry needs `rank`"))?,
        });
    }
    Ok(decls)
}

fn parse_pipeline_entry(
    item: &Spanned,
    implied_owner: Option<&DomainId>,
) -> Result<(PipelineSpec, Option<DomainId>, PipelineState), ScenarioError> {
    let entries = item
        .as_map()
        .ok_or_else(|| parse_err(item, "pipeline entry must be a mapping"))?;
    let mut pipeline_id = None;
    let mut purpose = None;
    let mut model = None;
    let mut owner = implied_owner.cloned();
    let mut placement = None;
    let mut state = PipelineState::Running;
    let mut min_accuracy = None;
    let mut nodes = NodeKind::standard_chain();
    for e in entries {
        match e.key.as_str() {
            "pipeline" => pipeline_id = Some(scalar(e)?),
            "purpose" => purpose = Some(scalar(e)?),
            "model" => model = Some(scalar(e)?),
            "owner" => owner = Some(domain(&scalar(e)?, &e.value)?),
            "placement" => placement = Some(domain(&scalar(e)?, &e.value)?),
            "state" => {
                state = match scalar(e)?.as_str() {
                    "running" => PipelineState::Running,
                    "requested" => PipelineState::Requested,
                    other => {
                        return Err(parse_err(&e.value, format!("unsupported initial state `{other}`")))
                    }
                }
            }
            "minaccuracy" => {
                let s = scalar(e)?;
                min_accuracy = Some(crate::node::parse_fraction(&s).ok_or_else(|| {
                    parse_err(&e.value, format!("`minaccuracy` must be a fraction or percentage, got `{s}`"))
                })?);
            }
            "nodes" => {
                let s = scalar(e)?;
                nodes = s
                    .split(',')
                    .map(|part| match part.trim() {
                        "source" => Ok(NodeKind::Source),
                        "collector" => Ok(NodeKind::Collector),
                        "preprocessor" => Ok(NodeKind::Preprocessor),
                        "model" => Ok(NodeKind::Model),
                        "policy" => Ok(NodeKind::Policy),
                        "sink" => Ok(NodeKind::Sink),
                        other => Err(parse_err(&e.value, format!("unknown node kind `{other}`"))),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
            }
            other => return Err(parse_err(item, format!("unknown pipeline key `{other}`"))),
        }
    }
    let pipeline_id = pipeline_id.ok_or_else(|| parse_err(item, "pipeline entry needs `pipeline`"))?;
    let purpose = purpose.ok_or_else(|| parse_err(item, "pipeline entry needs `purpose`"))?;
    let model = model.ok_or_else(|| parse_err(item, "pipeline entry needs `model`"))?;
    let owner = owner.ok_or_else(|| parse_err(item, "pipeline entry needs `owner`"))?;
    let spec = PipelineSpec::new(pipeline_id, purpose, nodes, model, owner, min_accuracy)
        .map_err(|e| parse_err(item, e.to_string()))?;
    Ok((spec, placement, state))
}

fn parse_catalogs(node: &Spanned) -> Result<BTreeMap<DomainId, Vec<PipelineSpec>>, ScenarioError> {
    let entries = match &node.value {
        Value::Map(entries) => entries.clone(),
        Value::Empty => Vec::new(),
        other => return Err(parse_err(node, format!("catalogs must map domains, got {}", other.kind_name()))),
    };
    let mut catalogs = BTreeMap::new();
    for e in &entries {
        let owner = domain(&e.key, &e.value)?;
        let mut specs = Vec::new();
        for item in seq_of_maps(&e.value, "catalog entries")? {
            let (spec, placement, _) = parse_pipeline_entry(&item, Some(&owner))?;
            if placement.is_some() {
                return Err(parse_err(&item, "catalog entries do not take a placement"));
            }
            specs.push(spec);
        }
        catalogs.insert(owner, specs);
    }
    Ok(catalogs)
}

fn parse_initial_pipelines(node: &Spanned) -> Result<Vec<PipelineInstance>, ScenarioError> {
    let mut out = Vec::new();
    for item in seq_of_maps(node, "initial_pipelines")? {
        let (spec, placement, state) = parse_pipeline_entry(&item, None)?;
        let placement = placement
            .ok_or_else(|| parse_err(&item, "initial pipeline needs `placement`"))?;
        out.push(PipelineInstance::new(spec, placement, state, 0));
    }
    Ok(out)
}

/// Trigger syntax: `event <kind> [metric=<name>]` or `intent <operation> <operand>`.
fn parse_trigger(text: &str, node: &Spanned) -> Result<RuleTrigger, ScenarioError> {
    let parts: Vec<&str> = text.split_whitespace().collect();
    match parts.as_slice() {
        ["intent", operation, operand] => Ok(RuleTrigger::OnIntentDirective {
            operation: operation.to_string(),
            operand: operand.to_string(),
        }),
        ["event", kind, rest @ ..] => {
            let kind = parse_event_kind(kind, node)?;
            let mut metric = None;
            for term in rest {
                if let Some(m) = term.strip_prefix("metric=") {
                    metric = Some(m.to_string());
                } else {
                    return Err(parse_err(node, format!("unknown trigger term `{term}`")));
                }
            }
            Ok(RuleTrigger::OnEvent { kind, metric })
        }
        _ => Err(parse_err(
            node,
            format!("trigger must be `intent <operation> <operand>` or `event <kind> [metric=..]`, got `{text}`"),
        )),
    }
}

fn parse_event_kind(text: &str, node: &Spanned) -> Result<MonitoringEventKind, ScenarioError> {
    match text {
        "threshold_crossover" => Ok(MonitoringEventKind::ThresholdCrossover),
        "policy_violation" => Ok(MonitoringEventKind::PolicyViolation),
        "failure" => Ok(MonitoringEventKind::Failure),
        "security_violation" => Ok(MonitoringEventKind::SecurityViolation),
        "redeployment_notice" => Ok(MonitoringEventKind::RedeploymentNotice),
        other => Err(parse_err(node, format!("unknown event kind `{other}`"))),
    }
}

fn parse_rules(node: &Spanned) -> Result<BTreeMap<DomainId, Vec<DerivationRule>>, ScenarioError> {
    let entries = match &node.value {
        Value::Map(entries) => entries.clone(),
        Value::Empty => Vec::new(),
        other => return Err(parse_err(node, format!("rules must map domains, got {}", other.kind_name()))),
    };
    let mut rules = BTreeMap::new();
    for domain_entry in &entries {
        let host = domain(&domain_entry.key, &domain_entry.value)?;
        let mut list = Vec::new();
        for item in seq_of_maps(&domain_entry.value, "rules")? {
            let fields = item
                .as_map()
                .ok_or_else(|| parse_err(&item, "rule must be a mapping"))?;
            let mut rule_id = None;
            let mut when = None;
            let mut to = None;
            let mut emit_targets = None;
            let mut emit_event = None;
            for e in fields {
                match e.key.as_str() {
                    "rule" => rule_id = Some(scalar(e)?),
                    "when" => {
                        let text = scalar(e)?;
                        when = Some(parse_trigger(&text, &e.value)?);
                    }
                    "to" => to = Some(domain(&scalar(e)?, &e.value)?),
                    "emit" => emit_targets = Some(parse_directive_templates(&e.value)?),
                    "emit_event" => emit_event = Some(parse_event_emit(&e.value)?),
                    other => return Err(parse_err(&item, format!("unknown rule key `{other}`"))),
                }
            }
            let rule_id = rule_id.ok_or_else(|| parse_err(&item, "rule needs `rule`"))?;
            let when = when.ok_or_else(|| parse_err(&item, "rule needs `when`"))?;
            let emit = match (emit_targets, emit_event) {
                (Some(targets), None) => RuleEmit::ChildIntent {
                    template: IntentTemplate { targets, priority: None },
                    to: to.ok_or_else(|| parse_err(&item, "intent-emitting rule needs `to`"))?,
                },
                (None, Some((kind, attrs))) => RuleEmit::ParentEvent { kind, attrs },
                (None, None) => return Err(parse_err(&item, "rule needs `emit` or `emit_event`")),
                (Some(_), Some(_)) => {
                    return Err(parse_err(&item, "rule takes `emit` or `emit_event`, not both"))
                }
            };
            list.push(DerivationRule { rule_id, when, emit });
        }
        rules.insert(host, list);
    }
    Ok(rules)
}

fn parse_directive_templates(node: &Spanned) -> Result<Vec<DirectiveTemplate>, ScenarioError> {
    let mut out = Vec::new();
    for item in seq_of_maps(node, "emit")? {
        let fields = item
            .as_map()
            .ok_or_else(|| parse_err(&item, "emit entry must be a mapping"))?;
        let mut target_id = None;
        let mut operation = None;
        let mut operand = None;
        let mut oparams = ParamMap::new();
        let mut constraints = ParamMap::new();
        for e in fields {
            match e.key.as_str() {
                "id" => target_id = Some(domain(&scalar(e)?, &e.value)?),
                "operation" => operation = Some(scalar(e)?),
                "operand" => operand = Some(scalar(e)?),
                "oparams" => oparams = flat_map(&e.value, "oparams")?,
                "constraints" => constraints = flat_map(&e.value, "constraints")?,
                other => return Err(parse_err(&item, format!("unknown emit key `{other}`"))),
            }
        }
        out.push(DirectiveTemplate {
            target_id: target_id.ok_or_else(|| parse_err(&item, "emit entry needs `id`"))?,
            operation: operation.ok_or_else(|| parse_err(&item, "emit entry needs `operation`"))?,
            operand: operand.ok_or_else(|| parse_err(&item, "emit entry needs `operand`"))?,
            oparams,
            constraints,
        });
    }
    if out.is_empty() {
        return Err(parse_err(node, "emit needs at least one directive"));
    }
    Ok(out)
}

fn parse_event_emit(node: &Spanned) -> Result<(MonitoringEventKind, ParamMap), ScenarioError> {
    let fields = node
        .as_map()
        .ok_or_else(|| parse_err(node, "emit_event must be a mapping"))?;
    let mut kind = None;
    let mut attrs = ParamMap::new();
    for e in fields {
        match e.key.as_str() {
            "kind" => {
                let text = scalar(e)?;
                kind = Some(parse_event_kind(&text, &e.value)?);
            }
            "attrs" => attrs = flat_map(&e.value, "attrs")?,
            other => return Err(parse_err(node, format!("unknown emit_event key `{other}`"))),
        }
    }
    Ok((kind.ok_or_else(|| parse_err(node, "emit_event needs `kind`"))?, attrs))
}

fn parse_policies(node: &Spanned) -> Result<BTreeMap<DomainId, ConflictPolicy>, ScenarioError> {
    let entries = match &node.value {
        Value::Map(entries) => entries.clone(),
        Value::Empty => Vec::new(),
        other => return Err(parse_err(node, format!("policies must map domains, got {}", other.kind_name()))),
    };
    let mut policies = BTreeMap::new();
    for domain_entry in &entries {
        let host = domain(&domain_entry.key, &domain_entry.value)?;
        let fields = domain_entry
            .value
            .as_map()
            .ok_or_else(|| parse_err(&domain_entry.value, "policy must be a mapping"))?;
        let mut policy = ConflictPolicy::default();
        for e in fields {
            match e.key.as_str() {
                "use_rank" => policy.use_rank = scalar_bool(e)?,
                "use_priority" => policy.use_priority = scalar_bool(e)?,
                "static_preferences" => {
                    let items = match &e.value.value {
                        Value::Seq(items) => items.clone(),
                        Value::Empty => Vec::new(),
                        other => {
                            return Err(parse_err(
                                &e.value,
                                format!("static_preferences must be a sequence, got {}", other.kind_name()),
                            ))
                        }
                    };
                    policy.static_preferences = items
                        .iter()
                        .map(|item| {
                            item.as_scalar()
                                .ok_or_else(|| parse_err(item, "preference must be a domain id"))
                                .and_then(|s| domain(s, item))
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                }
                other => return Err(parse_err(&domain_entry.value, format!("unknown policy key `{other}`"))),
            }
        }
        policies.insert(host, policy);
    }
    Ok(policies)
}

fn parse_failures(node: &Spanned) -> Result<BTreeSet<String>, ScenarioError> {
    let items = match &node.value {
        Value::Seq(items) => items.clone(),
        Value::Empty => Vec::new(),
        other => return Err(parse_err(node, format!("failures must be a sequence, got {}", other.kind_name()))),
    };
    let mut out = BTreeSet::new();
    for item in &items {
        let id = item
            .as_scalar()
            .ok_or_else(|| parse_err(item, "failure entry must be a pipeline id"))?;
        out.insert(id.to_string());
    }
    Ok(out)
}

fn parse_stimuli(node: &Spanned) -> Result<Vec<(u64, Stimulus)>, ScenarioError> {
    let mut out = Vec::new();
    for item in seq_of_maps(node, "stimuli")? {
        let fields = item
            .as_map()
            .ok_or_else(|| parse_err(&item, "stimulus must be a mapping"))?;
        let mut at = None;
        let mut kind = None;
        let mut to = None;
        let mut from = None;
        let mut expected_drop = "20%".to_string();
        let mut intent = None;
        let mut metrics = ParamMap::new();
        let mut attrs = ParamMap::new();
        let mut event_kind = None;
        for e in fields {
            match e.key.as_str() {
                "at" => at = Some(scalar_u64(e)?),
                "kind" => kind = Some(scalar(e)?),
                "to" => to = Some(domain(&scalar(e)?, &e.value)?),
                "from" => from = Some(domain(&scalar(e)?, &e.value)?),
                "expected_drop" => expected_drop = scalar(e)?,
                "intent" => {
                    intent = Some(intent::intent_from_tree(&e.value).map_err(|pe| {
                        ScenarioError::Parse { line: pe.line, col: pe.col, message: pe.kind.to_string() }
                    })?)
                }
                "metrics" => metrics = flat_map(&e.value, "metrics")?,
                "attrs" => attrs = flat_map(&e.value, "attrs")?,
                "event" => {
                    let text = scalar(e)?;
                    event_kind = Some(parse_event_kind(&text, &e.value)?);
                }
                other => return Err(parse_err(&item, format!("unknown stimulus key `{other}`"))),
            }
        }
        let at = at.ok_or_else(|| parse_err(&item, "stimulus needs `at`"))?;
        let kind = kind.ok_or_else(|| parse_err(&item, "stimulus needs `kind`"))?;
        let stimulus = match kind.as_str() {
            "operator_intent" => Stimulus::OperatorIntent {
                to: to.ok_or_else(|| parse_err(&item, "operator_intent needs `to`"))?,
                intent: intent.ok_or_else(|| parse_err(&item, "operator_intent needs `intent`"))?,
            },
            "public_user_surge" => Stimulus::PublicUserSurge { expected_drop: expected_drop.clone() },
            "report" => Stimulus::ChildReport {
                from: from.ok_or_else(|| parse_err(&item, "report needs `from`"))?,
                metrics,
            },
            "event" => Stimulus::ChildEvent {
                from: from.ok_or_else(|| parse_err(&item, "event needs `from`"))?,
                kind: event_kind.ok_or_else(|| parse_err(&item, "event stimulus needs `event`"))?,
                attrs,
            },
            other => return Err(parse_err(&item, format!("unknown stimulus kind `{other}`"))),
        };
        out.push((at, stimulus));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dom(s: &str) -> DomainId {
        DomainId::new(s).unwrap()
    }

    #[test]
    fn builtin_scenario_parses_and_validates() {
        let s = Scenario::smart_factory();
        assert_eq!(s.topology.len(), 3);
        assert_eq!(s.initial_pipelines.len(), 2);
        assert_eq!(s.stimuli.len(), 2);
        assert!(s.initial_pipelines.iter().all(|p| p.is_offloaded()));
        let topo = s.build_topology().unwrap();
        assert_eq!(topo.root(), &dom("OSS-01"));
        assert_eq!(topo.rank_of(&dom("Factory-01")), Some(2));
    }

    #[test]
    fn builtin_nodes_register_offloaded_instances_twice() {
        let s = Scenario::smart_factory();
        let topo = s.build_topology().unwrap();
        let nodes = s.build_nodes(&topo);
        assert_eq!(nodes[&dom("Edge-smart-factory-01")].pipelines.len(), 2);
        assert_eq!(nodes[&dom("Factory-01")].pipelines.len(), 2);
        assert!(nodes[&dom("OSS-01")].pipelines.is_empty());
        assert_eq!(nodes[&dom("OSS-01")].catalog.len(), 1);
    }

    #[test]
    fn unknown_section_is_a_parse_error_with_position() {
        let err = Scenario::from_text("bogus:\n  - x: 1\n").unwrap_err();
        match err {
            ScenarioError::Parse { line, message, .. } => {
                assert_eq!(line, 1);
                assert!(message.contains("bogus"));
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn decreasing_stimulus_times_are_rejected() {
        let text = "\
topology:
  - domain: A
    rank: 0
stimuli:
  - at: 5
    kind: public_user_surge
  - at: 2
    kind: public_user_surge
";
        let err = Scenario::from_text(text).unwrap_err();
        assert!(err.to_string().contains("non-decreasing"));
    }

    #[test]
    fn operator_intent_must_enter_at_root() {
        let text = "\
topology:
  - domain: A
    rank: 0
  - domain: B
    rank: 1
    parent: A
stimuli:
  - at: 0
    kind: operator_intent
    to: B
    intent:
      intentid: x
      targets:
        - id: B
          operation: maintain
          operand: SLA
";
        let err = Scenario::from_text(text).unwrap_err();
        assert!(err.to_string().contains("root"));
    }

    #[test]
    fn rule_targets_must_be_children() {
        let text = "\
topology:
  - domain: A
    rank: 0
  - domain: B
    rank: 1
    parent: A
rules:
  B:
    - rule: r1
      when: intent maintain SLA
      to: A
      emit:
        - id: A
          operation: stop
          operand: ml_offload
";
        let err = Scenario::from_text(text).unwrap_err();
        assert!(err.to_string().contains("not a child"));
    }
}
