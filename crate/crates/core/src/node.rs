//! The per-domain orchestrator actor.
//!
//! Each domain hosts one `MlfoNode`. The node interprets intents addressed to
//! its domain, forwards directives for descendants one hop down, derives new
//! intents from monitoring analytics through declarative rules, resolves
//! conflicting requirements, and drives pipeline lifecycles. A node never
//! performs effects directly: every decision is reified as an [`MlfoAction`]
//! and executed by the surrounding runtime (simulator or live transport),
//! which keeps the actor deterministic and testable in isolation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::intent::{DomainId, Intent, Origin, TargetDirective, Vocabulary};
use crate::interfaces::{MonitoringEvent, MonitoringEventKind, MonitoringMsg, MonitoringReport};
use crate::kv::ParamMap;
use crate::pipeline::{
    affected_pipelines, redeploy_plan, PipelineInstance, PipelineSpec, PipelineState,
    TransitionError,
};

// ---------------------------------------------------------------------------
// Derivation rules
// ---------------------------------------------------------------------------

/// What a rule reacts to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuleTrigger {
    /// An applied intent directive with this operation and operand.
    OnIntentDirective { operation: String, operand: String },
    /// A monitoring event of this kind, optionally narrowed to one metric
    /// attribute.
    OnEvent { kind: MonitoringEventKind, metric: Option<String> },
}

/// What a rule emits when it fires. Placeholders like `{value}` in template
/// scalars are substituted from the trigger context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuleEmit {
    /// Derive an intent and send it one level down.
    ChildIntent { template: IntentTemplate, to: DomainId },
    /// Raise a monitoring event one level up.
    ParentEvent { kind: MonitoringEventKind, attrs: ParamMap },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntentTemplate {
    pub targets: Vec<DirectiveTemplate>,
    pub priority: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectiveTemplate {
    pub target_id: DomainId,
    pub operation: String,
    pub operand: String,
    pub oparams: ParamMap,
    pub constraints: ParamMap,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DerivationRule {
    pub rule_id: String,
    pub when: RuleTrigger,
    pub emit: RuleEmit,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("rule `{rule}`: unresolved placeholder `{{{placeholder}}}`")]
    Unresolved { rule: String, placeholder: String },
    #[error("rule `{rule}`: substituted value for `{key}` is not a legal scalar: {why}")]
    BadScalar { rule: String, key: String, why: String },
}

/// The trigger a rule fired on, carrying the values placeholders draw from.
#[derive(Debug, Clone)]
pub enum Trigger<'a> {
    IntentDirective { intent: &'a Intent, directive: &'a TargetDirective },
    Event(&'a MonitoringEvent),
}

impl RuleTrigger {
    pub fn matches(&self, trigger: &Trigger) -> bool {
        match (self, trigger) {
            (
                RuleTrigger::OnIntentDirective { operation, operand },
                Trigger::IntentDirective { directive, .. },
            ) => directive.operation == *operation && directive.operand == *operand,
            (RuleTrigger::OnEvent { kind, metric }, Trigger::Event(event)) => {
                event.kind == *kind
                    && metric
                        .as_ref()
                        .map(|m| event.attrs.get("metric") == Some(m.as_str()))
                        .unwrap_or(true)
            }
            _ => false,
        }
    }
}

fn trigger_context(trigger: &Trigger) -> BTreeMap<String, String> {
    let mut ctx = BTreeMap::new();
    match trigger {
        Trigger::IntentDirective { intent, directive } => {
            ctx.insert("operation".into(), directive.operation.clone());
            ctx.insert("operand".into(), directive.operand.clone());
            let source = match &intent.origin {
                Origin::Operator => "operator".to_string(),
                Origin::Mlfo(d) => d.to_string(),
            };
            ctx.insert("source_domain".into(), source);
            for (k, v) in directive.oparams.iter() {
                ctx.insert(k.to_string(), v.to_string());
            }
        }
        Trigger::Event(event) => {
            ctx.insert("kind".into(), event.kind.to_string());
            ctx.insert("source_domain".into(), event.sender.to_string());
            for (k, v) in event.attrs.iter() {
                ctx.insert(k.to_string(), v.to_string());
            }
        }
    }
    ctx
}

fn substitute(
    rule_id: &str,
    text: &str,
    ctx: &BTreeMap<String, String>,
) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}').ok_or_else(|| TemplateError::Unresolved {
            rule: rule_id.to_string(),
            placeholder: after.to_string(),
        })?;
        let name = &after[..close];
        let value = ctx.get(name).ok_or_else(|| TemplateError::Unresolved {
            rule: rule_id.to_string(),
            placeholder: name.to_string(),
        })?;
        out.push_str(value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn instantiate_map(
    rule_id: &str,
    template: &ParamMap,
    ctx: &BTreeMap<String, String>,
) -> Result<ParamMap, TemplateError> {
    let mut out = ParamMap::new();
    for (k, v) in template.iter() {
        let value = substitute(rule_id, v, ctx)?;
        out.insert(k, &value).map_err(|e| TemplateError::BadScalar {
            rule: rule_id.to_string(),
            key: k.to_string(),
            why: e.to_string(),
        })?;
    }
    Ok(out)
}

/// Build a concrete intent from a fired rule: fresh id, orchestrator origin,
/// and template scalars with placeholders substituted from the trigger.
pub fn derive_intent(
    rule: &DerivationRule,
    trigger: &Trigger,
    fresh_id: &str,
    origin_domain: &DomainId,
) -> Result<Intent, TemplateError> {
    let template = match &rule.emit {
        RuleEmit::ChildIntent { template, .. } => template,
        RuleEmit::ParentEvent { .. } => {
            unreachable!("derive_intent is only called for child-intent rules")
        }
    };
    let ctx = trigger_context(trigger);
    let mut targets = Vec::with_capacity(template.targets.len());
    for t in &template.targets {
        targets.push(TargetDirective {
            target_id: t.target_id.clone(),
            operation: substitute(&rule.rule_id, &t.operation, &ctx)?,
            operand: substitute(&rule.rule_id, &t.operand, &ctx)?,
            oparams: instantiate_map(&rule.rule_id, &t.oparams, &ctx)?,
            constraints: instantiate_map(&rule.rule_id, &t.constraints, &ctx)?,
        });
    }
    let mut intent = Intent::new(fresh_id, Origin::Mlfo(origin_domain.clone()), targets);
    intent.priority = template.priority;
    Ok(intent)
}

// ---------------------------------------------------------------------------
// Conflict resolution
// ---------------------------------------------------------------------------

/// How a node decides between incompatible requirements on the same operand.
/// Resolution is total: rule order is static preference, then hierarchy rank,
/// then priority, then recency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConflictPolicy {
    /// Origins listed here always beat origins listed later or not at all.
    pub static_preferences: Vec<DomainId>,
    pub use_priority: bool,
    pub use_rank: bool,
}

impl Default for ConflictPolicy {
    fn default() -> Self {
        ConflictPolicy { static_preferences: Vec::new(), use_priority: true, use_rank: true }
    }
}

/// One side of a conflict: the directive plus the context the policy weighs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConflictSide {
    pub directive: TargetDirective,
    pub origin: Origin,
    pub origin_rank: u32,
    pub priority: Option<u32>,
    pub intent_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Winner {
    Incumbent,
    Challenger,
}

fn preference_index(policy: &ConflictPolicy, origin: &Origin) -> Option<usize> {
    origin
        .domain()
        .and_then(|d| policy.static_preferences.iter().position(|p| p == d))
}

/// Deterministic lexicographic decision between an established requirement
/// and a newly arrived one.
pub fn resolve_conflict(
    policy: &ConflictPolicy,
    incumbent: &ConflictSide,
    challenger: &ConflictSide,
) -> Winner {
    match (preference_index(policy, &incumbent.origin), preference_index(policy, &challenger.origin)) {
        (Some(a), Some(b)) if a < b => return Winner::Incumbent,
        (Some(a), Some(b)) if a > b => return Winner::Challenger,
        (Some(_), None) => return Winner::Incumbent,
        (None, Some(_)) => return Winner::Challenger,
        _ => {}
    }
    if policy.use_rank {
        // Lower rank sits higher in the hierarchy and carries more authority.
        if incumbent.origin_rank < challenger.origin_rank {
            return Winner::Incumbent;
        }
        if incumbent.origin_rank > challenger.origin_rank {
            return Winner::Challenger;
        }
    }
    if policy.use_priority {
        let inc = incumbent.priority.unwrap_or(0);
        let ch = challenger.priority.unwrap_or(0);
        if inc > ch {
            return Winner::Incumbent;
        }
        if inc < ch {
            return Winner::Challenger;
        }
    }
    // Full tie: the latest requirement prevails.
    Winner::Challenger
}

/// Identical (operation, oparams) pairs restate each other; only differing
/// ones conflict.
pub fn directives_conflict(a: &TargetDirective, b: &TargetDirective) -> bool {
    a.operand == b.operand && (a.operation != b.operation || a.oparams != b.oparams)
}

// ---------------------------------------------------------------------------
// Actions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectCode {
    UnknownTarget,
    ConflictLoss,
    UnknownOperation,
}

impl RejectCode {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectCode::UnknownTarget => "unknown-target",
            RejectCode::ConflictLoss => "conflict-loss",
            RejectCode::UnknownOperation => "unknown-operation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectReason {
    pub code: RejectCode,
    pub detail: String,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(f, "{}: {}", self.code.as_str(), self.detail)
    }
}

/// Reified effect of handling one message. Execution (scheduling, transport)
/// belongs to the runtime.
#[derive(Debug, Clone, PartialEq)]
pub enum MlfoAction {
    DeployPipeline { spec: PipelineSpec, placement: DomainId, generation: u32 },
    Teardown { pipeline_id: String },
    SendIntent { intent: Intent, to: DomainId },
    SendMonitoring { msg: MonitoringMsg, to: DomainId },
    RejectIntent { intent_id: String, reason: RejectReason },
    ConflictResolved { operand: String, winner_intent: String, loser_intent: String },
    Noop { reason: String },
}

// ---------------------------------------------------------------------------
// The actor
// ---------------------------------------------------------------------------

/// A requirement currently enforced for one operand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveRequirement {
    pub directive: TargetDirective,
    pub origin: Origin,
    pub origin_rank: u32,
    pub priority: Option<u32>,
    pub intent_id: String,
}

#[derive(Debug, Clone)]
pub struct MlfoNode {
    pub domain: DomainId,
    pub rank: u32,
    pub parent: Option<DomainId>,
    pub children: BTreeSet<DomainId>,
    pub pipelines: Vec<PipelineInstance>,
    pub rules: Vec<DerivationRule>,
    pub policy: ConflictPolicy,
    pub catalog: Vec<PipelineSpec>,
    pub vocab: Vocabulary,
    pub active_requirements: BTreeMap<String, ActiveRequirement>,
    /// Expected degradation recorded by `anticipate`, keyed by operand.
    pub expected_degradation: BTreeMap<String, ParamMap>,
    /// Latest report per child, recorded for analytics.
    pub last_reports: BTreeMap<DomainId, MonitoringReport>,
    /// Redeployed pipelines whose upward notice waits for the local instance
    /// to reach running.
    pending_notices: BTreeSet<String>,
    /// Next-hop child for each strict descendant, for forwarding.
    routes: BTreeMap<DomainId, DomainId>,
    /// Ranks of the ancestor chain (plus self), for conflict resolution.
    known_ranks: BTreeMap<DomainId, u32>,
    intent_seq: u64,
    clock: u64,
}

impl MlfoNode {
    pub fn new(domain: DomainId, rank: u32, parent: Option<DomainId>) -> Self {
        let mut known_ranks = BTreeMap::new();
        known_ranks.insert(domain.clone(), rank);
        if let Some(p) = &parent {
            known_ranks.insert(p.clone(), rank.saturating_sub(1));
        }
        MlfoNode {
            domain,
            rank,
            parent,
            children: BTreeSet::new(),
            pipelines: Vec::new(),
            rules: Vec::new(),
            policy: ConflictPolicy::default(),
            catalog: Vec::new(),
            vocab: Vocabulary::default(),
            active_requirements: BTreeMap::new(),
            expected_degradation: BTreeMap::new(),
            last_reports: BTreeMap::new(),
            pending_notices: BTreeSet::new(),
            routes: BTreeMap::new(),
            known_ranks,
            intent_seq: 0,
            clock: 0,
        }
    }

    pub fn with_children(mut self, children: impl IntoIterator<Item = DomainId>) -> Self {
        for c in children {
            self.known_ranks.insert(c.clone(), self.rank + 1);
            self.children.insert(c);
        }
        self
    }

    /// Install forwarding routes (descendant → next-hop child).
    pub fn set_routes(&mut self, routes: BTreeMap<DomainId, DomainId>) {
        self.routes = routes;
    }

    /// Install the ranks of this node's ancestor chain.
    pub fn set_ancestor_ranks(&mut self, ranks: BTreeMap<DomainId, u32>) {
        for (d, r) in ranks {
            self.known_ranks.insert(d, r);
        }
    }

    /// Advance the node's logical clock; stamps emitted monitoring messages.
    pub fn set_clock(&mut self, t: u64) {
        self.clock = t;
    }

    pub fn fresh_intent_id(&mut self) -> String {
        self.intent_seq += 1;
        format!("{}-i{}", self.domain, self.intent_seq)
    }

    fn origin_rank(&self, origin: &Origin) -> u32 {
        match origin {
            // Operator requirements enter at the root.
            Origin::Operator => 0,
            Origin::Mlfo(d) => self.known_ranks.get(d).copied().unwrap_or(0),
        }
    }

    fn live_pipeline_serving(&self, operand: &str) -> bool {
        self.pipelines
            .iter()
            .any(|p| p.spec.purpose == operand && p.state.is_live())
    }

    fn next_generation(&self, pipeline_id: &str) -> u32 {
        self.pipelines
            .iter()
            .filter(|p| p.pipeline_id() == pipeline_id)
            .map(|p| p.generation + 1)
            .max()
            .unwrap_or(0)
    }

    /// Interpret one intent. Directives for this domain are applied in listed
    /// order after conflict resolution; directives for descendants are
    /// forwarded one hop down; anything else is rejected. Never silent: at
    /// least one action is always returned.
    pub fn handle_intent(&mut self, intent: &Intent) -> Vec<MlfoAction> {
        let mut actions = Vec::new();
        let mut forwards: Vec<(DomainId, Vec<TargetDirective>)> = Vec::new();

        for directive in &intent.targets {
            if directive.target_id == self.domain {
                self.apply_directive(intent, directive, &mut actions);
            } else if let Some(hop) = self.next_hop(&directive.target_id) {
                match forwards.iter_mut().find(|(to, _)| *to == hop) {
                    Some((_, ds)) => ds.push(directive.clone()),
                    None => forwards.push((hop, vec![directive.clone()])),
                }
            } else {
                actions.push(MlfoAction::RejectIntent {
                    intent_id: intent.intent_id.clone(),
                    reason: RejectReason {
                        code: RejectCode::UnknownTarget,
                        detail: format!("no route to domain `{}`", directive.target_id),
                    },
                });
            }
        }

        for (to, targets) in forwards {
            let mut sub = Intent::new(intent.intent_id.clone(), intent.origin.clone(), targets);
            sub.priority = intent.priority;
            actions.push(MlfoAction::SendIntent { intent: sub, to });
        }

        if actions.is_empty() {
            actions.push(MlfoAction::Noop { reason: "no applicable directive".into() });
        }
        actions
    }

    fn next_hop(&self, target: &DomainId) -> Option<DomainId> {
        if self.children.contains(target) {
            Some(target.clone())
        } else {
            self.routes.get(target).cloned()
        }
    }

    fn apply_directive(
        &mut self,
        intent: &Intent,
        directive: &TargetDirective,
        actions: &mut Vec<MlfoAction>,
    ) {
        if !self.vocab.knows_operation(&directive.operation) {
            if self.vocab.strict {
                actions.push(MlfoAction::RejectIntent {
                    intent_id: intent.intent_id.clone(),
                    reason: RejectReason {
                        code: RejectCode::UnknownOperation,
                        detail: format!("operation `{}` is not in the vocabulary", directive.operation),
                    },
                });
            } else {
                actions.push(MlfoAction::Noop {
                    reason: format!("recorded unknown operation `{}`", directive.operation),
                });
            }
            return;
        }

        // Conflict check against the requirement currently held for this
        // operand.
        if let Some(incumbent) = self.active_requirements.get(&directive.operand) {
            if !directives_conflict(&incumbent.directive, directive) {
                actions.push(MlfoAction::Noop {
                    reason: format!("requirement on `{}` already in force", directive.operand),
                });
                return;
            }
            let challenger = ConflictSide {
                directive: directive.clone(),
                origin: intent.origin.clone(),
                origin_rank: self.origin_rank(&intent.origin),
                priority: intent.priority,
                intent_id: intent.intent_id.clone(),
            };
            let incumbent_side = ConflictSide {
                directive: incumbent.directive.clone(),
                origin: incumbent.origin.clone(),
                origin_rank: incumbent.origin_rank,
                priority: incumbent.priority,
                intent_id: incumbent.intent_id.clone(),
            };
            match resolve_conflict(&self.policy, &incumbent_side, &challenger) {
                Winner::Incumbent => {
                    actions.push(MlfoAction::ConflictResolved {
                        operand: directive.operand.clone(),
                        winner_intent: incumbent_side.intent_id.clone(),
                        loser_intent: intent.intent_id.clone(),
                    });
                    actions.push(MlfoAction::RejectIntent {
                        intent_id: intent.intent_id.clone(),
                        reason: RejectReason {
                            code: RejectCode::ConflictLoss,
                            detail: format!(
                                "operand `{}` held by `{}`",
                                directive.operand, incumbent_side.intent_id
                            ),
                        },
                    });
                    return;
                }
                Winner::Challenger => {
                    actions.push(MlfoAction::ConflictResolved {
                        operand: directive.operand.clone(),
                        winner_intent: intent.intent_id.clone(),
                        loser_intent: incumbent_side.intent_id.clone(),
                    });
                }
            }
        }

        self.active_requirements.insert(
            directive.operand.clone(),
            ActiveRequirement {
                directive: directive.clone(),
                origin: intent.origin.clone(),
                origin_rank: self.origin_rank(&intent.origin),
                priority: intent.priority,
                intent_id: intent.intent_id.clone(),
            },
        );

        match directive.operation.as_str() {
            "maintain" => self.apply_maintain(directive, actions),
            "anticipate" => {
                self.expected_degradation
                    .insert(directive.operand.clone(), directive.oparams.clone());
                actions.push(MlfoAction::Noop {
                    reason: format!("anticipating degradation of `{}`", directive.operand),
                });
            }
            "stop" => self.apply_stop(directive, actions),
            // Verbs in the vocabulary without pipeline-level semantics are
            // recorded as requirements only.
            _ => actions.push(MlfoAction::Noop {
                reason: format!("requirement `{}:{}` recorded", directive.operation, directive.operand),
            }),
        }

        self.fire_rules(&Trigger::IntentDirective { intent, directive }, actions);
    }

    fn apply_maintain(&mut self, directive: &TargetDirective, actions: &mut Vec<MlfoAction>) {
        if self.live_pipeline_serving(&directive.operand) {
            actions.push(MlfoAction::Noop {
                reason: format!("a pipeline already serves `{}`", directive.operand),
            });
            return;
        }
        let candidate = self.catalog.iter().find(|s| s.purpose == directive.operand).cloned();
        match candidate {
            Some(mut spec) => {
                if let Some(acc) = directive.oparams.get("minaccuracy").and_then(parse_fraction) {
                    spec.min_accuracy = Some(acc);
                }
                let generation = self.next_generation(&spec.pipeline_id);
                let instance = PipelineInstance::new(
                    spec.clone(),
                    self.domain.clone(),
                    PipelineState::Requested,
                    generation,
                );
                self.pipelines.push(instance);
                actions.push(MlfoAction::DeployPipeline {
                    spec,
                    placement: self.domain.clone(),
                    generation,
                });
            }
            None => actions.push(MlfoAction::Noop {
                reason: format!("requirement recorded; no catalog entry serves `{}`", directive.operand),
            }),
        }
    }

    fn apply_stop(&mut self, directive: &TargetDirective, actions: &mut Vec<MlfoAction>) {
        if directive.operand == "ml_offload" {
            let plans: Vec<_> = affected_pipelines(&self.pipelines, directive)
                .into_iter()
                .filter(|p| p.state == PipelineState::Running)
                .map(|p| redeploy_plan(p, self.domain.clone()))
                .collect();
            let mut any = false;
            for plan in plans {
                // Instances selected above are running and offloaded, so the
                // plan cannot fail.
                let plan = plan.expect("redeploy plan for a running offloaded instance");
                any = true;
                let old_id = plan.teardown_target.pipeline_id().to_string();
                let old_gen = plan.teardown_target.generation;
                // The remote copy is now the hosting domain's to retire; keep
                // only the local replacement in our books.
                self.pipelines
                    .retain(|p| !(p.pipeline_id() == old_id && p.generation == old_gen));
                self.pending_notices.insert(plan.deploy.pipeline_id().to_string());
                actions.push(MlfoAction::DeployPipeline {
                    spec: plan.deploy.spec.clone(),
                    placement: plan.deploy.placement.clone(),
                    generation: plan.deploy.generation,
                });
                self.pipelines.push(plan.deploy);
            }
            if !any {
                actions.push(MlfoAction::Noop { reason: "no offloaded pipelines to repatriate".into() });
            }
        } else {
            let ids: Vec<String> = affected_pipelines(&self.pipelines, directive)
                .into_iter()
                .filter(|p| p.placement == self.domain && p.state == PipelineState::Running)
                .map(|p| p.pipeline_id().to_string())
                .collect();
            if ids.is_empty() {
                actions.push(MlfoAction::Noop {
                    reason: format!("no running pipeline serves `{}`", directive.operand),
                });
            }
            for pipeline_id in ids {
                actions.push(MlfoAction::Teardown { pipeline_id });
            }
        }
    }

    /// React to monitoring traffic: redeployment notices release the teardown
    /// of the corresponding offloaded instance; other events fire rules;
    /// everything else is recorded.
    pub fn handle_monitoring(&mut self, msg: &MonitoringMsg) -> Vec<MlfoAction> {
        let mut actions = Vec::new();
        match msg {
            MonitoringMsg::Report(report) => {
                self.last_reports.insert(report.sender.clone(), report.clone());
                actions.push(MlfoAction::Noop { reason: "report recorded".into() });
            }
            MonitoringMsg::Event(event) => {
                if event.kind == MonitoringEventKind::RedeploymentNotice {
                    let pipeline_id = event.attrs.get("pipeline_id").unwrap_or_default().to_string();
                    let hosted = self.pipelines.iter().any(|p| {
                        p.pipeline_id() == pipeline_id
                            && p.is_offloaded()
                            && p.placement == self.domain
                            && p.state == PipelineState::Running
                    });
                    if hosted {
                        actions.push(MlfoAction::Teardown { pipeline_id });
                    } else {
                        actions.push(MlfoAction::Noop {
                            reason: format!("no offloaded instance `{pipeline_id}` hosted here"),
                        });
                    }
                } else {
                    self.fire_rules(&Trigger::Event(event), &mut actions);
                    if actions.is_empty() {
                        actions.push(MlfoAction::Noop { reason: "event recorded".into() });
                    }
                }
            }
        }
        actions
    }

    fn fire_rules(&mut self, trigger: &Trigger, actions: &mut Vec<MlfoAction>) {
        let rules: Vec<DerivationRule> =
            self.rules.iter().filter(|r| r.when.matches(trigger)).cloned().collect();
        for rule in rules {
            match &rule.emit {
                RuleEmit::ChildIntent { to, .. } => {
                    let fresh_id = self.fresh_intent_id();
                    match derive_intent(&rule, trigger, &fresh_id, &self.domain) {
                        Ok(intent) => {
                            actions.push(MlfoAction::SendIntent { intent, to: to.clone() })
                        }
                        Err(e) => actions.push(MlfoAction::Noop {
                            reason: format!("rule `{}` failed: {e}", rule.rule_id),
                        }),
                    }
                }
                RuleEmit::ParentEvent { kind, attrs } => match &self.parent {
                    Some(parent) => {
                        let ctx = trigger_context(trigger);
                        match instantiate_map(&rule.rule_id, attrs, &ctx) {
                            Ok(attrs) => {
                                let event = MonitoringEvent {
                                    sender: self.domain.clone(),
                                    at: self.clock,
                                    kind: *kind,
                                    attrs,
                                };
                                actions.push(MlfoAction::SendMonitoring {
                                    msg: MonitoringMsg::Event(event),
                                    to: parent.clone(),
                                });
                            }
                            Err(e) => actions.push(MlfoAction::Noop {
                                reason: format!("rule `{}` failed: {e}", rule.rule_id),
                            }),
                        }
                    }
                    None => actions.push(MlfoAction::Noop {
                        reason: format!("rule `{}` has no parent to notify", rule.rule_id),
                    }),
                },
            }
        }
    }

    /// Apply a lifecycle change to the named instance and react to it: a
    /// repatriated pipeline reaching running releases its upward notice; a
    /// deploy failure raises a failure event.
    pub fn handle_pipeline_transition(
        &mut self,
        pipeline_id: &str,
        generation: u32,
        to: PipelineState,
    ) -> Result<Vec<MlfoAction>, TransitionError> {
        let idx = self
            .pipelines
            .iter()
            .position(|p| p.pipeline_id() == pipeline_id && p.generation == generation)
            .unwrap_or_else(|| panic!("unknown pipeline instance `{pipeline_id}` gen {generation}"));
        let from = self.pipelines[idx].state;
        self.pipelines[idx] = self.pipelines[idx].transition(to)?;

        let mut actions = Vec::new();
        if to == PipelineState::Running && self.pending_notices.remove(pipeline_id) {
            if let Some(parent) = &self.parent {
                let event =
                    MonitoringEvent::redeployment_notice(self.domain.clone(), self.clock, pipeline_id);
                actions.push(MlfoAction::SendMonitoring {
                    msg: MonitoringMsg::Event(event),
                    to: parent.clone(),
                });
            }
        }
        if to == PipelineState::Terminated && from == PipelineState::Deploying {
            if let Some(parent) = &self.parent {
                let event = MonitoringEvent::new(self.domain.clone(), self.clock, MonitoringEventKind::Failure)
                    .with_attr("reason", "deploy_failure");
                actions.push(MlfoAction::SendMonitoring {
                    msg: MonitoringMsg::Event(event),
                    to: parent.clone(),
                });
            }
        }
        Ok(actions)
    }
}

/// Interpret scalars like `95%` or `0.95` as a fraction in [0, 1].
pub fn parse_fraction(text: &str) -> Option<f64> {
    let value = if let Some(percent) = text.strip_suffix('%') {
        percent.trim().parse::<f64>().ok()? / 100.0
    } else {
        text.trim().parse::<f64>().ok()?
    };
    (0.0..=1.0).contains(&value).then_some(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intent::parse_intent;
    use crate::samples;

    fn dom(s: &str) -> DomainId {
        DomainId::new(s).unwrap()
    }

    fn oss_node() -> MlfoNode {
        let mut node = MlfoNode::new(dom("OSS-01"), 0, None)
            .with_children([dom("Edge-smart-factory-01")]);
        node.catalog = vec![PipelineSpec::standard(
            "qos-prediction-01",
            "SLA",
            "qos-predictor-v1",
            dom("OSS-01"),
        )];
        node.rules = vec![DerivationRule {
            rule_id: "qos-drop-derivation".into(),
            when: RuleTrigger::OnEvent {
                kind: MonitoringEventKind::ThresholdCrossover,
                metric: Some("predicted_qos_drop".into()),
            },
            emit: RuleEmit::ChildIntent {
                template: IntentTemplate {
                    targets: vec![
                        DirectiveTemplate {
                            target_id: dom("Edge-smart-factory-01"),
                            operation: "anticipate".into(),
                            operand: "QoS".into(),
                            oparams: ParamMap::from_pairs([("expected_drop", "{value}")]).unwrap(),
                            constraints: ParamMap::new(),
                        },
                        DirectiveTemplate {
                            target_id: dom("Edge-smart-factory-01"),
                            operation: "maintain".into(),
                            operand: "ml_inference".into(),
                            oparams: ParamMap::from_pairs([("minaccuracy", "95%")]).unwrap(),
                            constraints: ParamMap::new(),
                        },
                    ],
                    priority: None,
                },
                to: dom("Edge-smart-factory-01"),
            },
        }];
        node
    }

    fn edge_node_with_offloaded() -> MlfoNode {
        let mut node = MlfoNode::new(dom("Edge-smart-factory-01"), 1, Some(dom("OSS-01")))
            .with_children([dom("Factory-01")]);
        node.rules = vec![DerivationRule {
            rule_id: "qos-anticipate-stops-offload".into(),
            when: RuleTrigger::OnIntentDirective { operation: "anticipate".into(), operand: "QoS".into() },
            emit: RuleEmit::ChildIntent {
                template: IntentTemplate {
                    targets: vec![DirectiveTemplate {
                        target_id: dom("Factory-01"),
                        operation: "stop".into(),
                        operand: "ml_offload".into(),
                        oparams: ParamMap::new(),
                        constraints: ParamMap::new(),
                    }],
                    priority: None,
                },
                to: dom("Factory-01"),
            },
        }];
        node.pipelines = vec![PipelineInstance::new(
            PipelineSpec::standard("factory-inference-01", "ml_inference", "defect-detect-v2", dom("Factory-01")),
            dom("Edge-smart-factory-01"),
            PipelineState::Running,
            0,
        )];
        node
    }

    fn factory_node_with_offloaded() -> MlfoNode {
        let mut node = MlfoNode::new(dom("Factory-01"), 2, Some(dom("Edge-smart-factory-01")));
        node.pipelines = vec![PipelineInstance::new(
            PipelineSpec::standard("factory-inference-01", "ml_inference", "defect-detect-v2", dom("Factory-01")),
            dom("Edge-smart-factory-01"),
            PipelineState::Running,
            0,
        )];
        node
    }

    fn qos_drop_event(value: &str) -> MonitoringEvent {
        MonitoringEvent::new(dom("OSS-01"), 5, MonitoringEventKind::ThresholdCrossover)
            .with_attr("metric", "predicted_qos_drop")
            .with_attr("value", value)
    }

    #[test]
    fn maintain_sla_deploys_prediction_pipeline_and_records_requirement() {
        let mut node = oss_node();
        let intent = parse_intent(samples::INTENT_A_TEXT).unwrap();
        let actions = node.handle_intent(&intent);
        assert!(matches!(
            actions.as_slice(),
            [MlfoAction::DeployPipeline { placement, generation: 0, .. }] if *placement == dom("OSS-01")
        ));
        assert!(node.active_requirements.contains_key("SLA"));
        assert_eq!(node.pipelines.len(), 1);
        assert_eq!(node.pipelines[0].state, PipelineState::Requested);
    }

    #[test]
    fn anticipate_fires_rule_deriving_offload_stop() {
        let mut node = edge_node_with_offloaded();
        let intent = parse_intent(samples::INTENT_B_TEXT).unwrap();
        let actions = node.handle_intent(&intent);
        let sent: Vec<_> = actions
            .iter()
            .filter_map(|a| match a {
                MlfoAction::SendIntent { intent, to } => Some((intent, to)),
                _ => None,
            })
            .collect();
        assert_eq!(sent.len(), 1);
        let (derived, to) = sent[0];
        assert_eq!(*to, dom("Factory-01"));
        assert_eq!(derived.origin, Origin::Mlfo(dom("Edge-smart-factory-01")));
        assert_eq!(derived.directive_summary(), "stop:ml_offload");
        assert_eq!(node.expected_degradation.get("QoS").unwrap().get("expected_drop"), Some("20%"));
        // The second directive (maintain ml_inference) is already served by
        // the hosted offloaded pipeline, so no new deploy appears.
        assert!(!actions.iter().any(|a| matches!(a, MlfoAction::DeployPipeline { .. })));
    }

    #[test]
    fn stop_offload_redeploys_locally_and_defers_notice_until_running() {
        let mut node = factory_node_with_offloaded();
        let intent = parse_intent(samples::INTENT_C_TEXT).unwrap();
        let actions = node.handle_intent(&intent);
        assert!(matches!(
            actions.as_slice(),
            [MlfoAction::DeployPipeline { placement, generation: 1, .. }]
                if *placement == dom("Factory-01")
        ));
        // No notice yet.
        assert!(!actions.iter().any(|a| matches!(a, MlfoAction::SendMonitoring { .. })));

        let follow_up = node
            .handle_pipeline_transition("factory-inference-01", 1, PipelineState::Deploying)
            .unwrap();
        assert!(follow_up.is_empty());
        let follow_up = node
            .handle_pipeline_transition("factory-inference-01", 1, PipelineState::Running)
            .unwrap();
        match follow_up.as_slice() {
            [MlfoAction::SendMonitoring { msg: MonitoringMsg::Event(e), to }] => {
                assert_eq!(e.kind, MonitoringEventKind::RedeploymentNotice);
                assert_eq!(e.attrs.get("pipeline_id"), Some("factory-inference-01"));
                assert_eq!(*to, dom("Edge-smart-factory-01"));
            }
            other => panic!("expected a redeployment notice, got {other:?}"),
        }
    }

    #[test]
    fn redeployment_notice_releases_teardown_of_hosted_instance() {
        let mut node = edge_node_with_offloaded();
        let notice = MonitoringEvent::redeployment_notice(dom("Factory-01"), 11, "factory-inference-01");
        let actions = node.handle_monitoring(&MonitoringMsg::Event(notice));
        assert_eq!(
            actions,
            vec![MlfoAction::Teardown { pipeline_id: "factory-inference-01".into() }]
        );
    }

    #[test]
    fn threshold_crossover_derives_downstream_intent() {
        let mut node = oss_node();
        let actions = node.handle_monitoring(&MonitoringMsg::Event(qos_drop_event("20%")));
        match actions.as_slice() {
            [MlfoAction::SendIntent { intent, to }] => {
                assert_eq!(*to, dom("Edge-smart-factory-01"));
                assert_eq!(intent.directive_summary(), "anticipate:QoS;maintain:ml_inference");
                assert_eq!(intent.targets[0].oparams.get("expected_drop"), Some("20%"));
                assert_eq!(intent.targets[1].oparams.get("minaccuracy"), Some("95%"));
            }
            other => panic!("expected derived intent, got {other:?}"),
        }
    }

    #[test]
    fn unmatched_monitoring_is_recorded_not_dropped() {
        let mut node = oss_node();
        let report = MonitoringReport {
            sender: dom("Edge-smart-factory-01"),
            at: 1,
            metrics: ParamMap::from_pairs([("model_accuracy", "0.99")]).unwrap(),
        };
        let actions = node.handle_monitoring(&MonitoringMsg::Report(report));
        assert!(matches!(actions.as_slice(), [MlfoAction::Noop { .. }]));
        assert!(node.last_reports.contains_key(&dom("Edge-smart-factory-01")));

        let stray = MonitoringEvent::new(dom("Edge-smart-factory-01"), 2, MonitoringEventKind::ThresholdCrossover)
            .with_attr("metric", "cpu_temperature")
            .with_attr("value", "88C");
        let actions = node.handle_monitoring(&MonitoringMsg::Event(stray));
        assert!(matches!(actions.as_slice(), [MlfoAction::Noop { .. }]));
    }

    #[test]
    fn unknown_target_is_rejected() {
        let mut node = oss_node();
        let text = "intentid: ghost\ntargets:\n  - id: Ghost-99\n    operation: maintain\n    operand: SLA\n";
        let intent = parse_intent(text).unwrap();
        let actions = node.handle_intent(&intent);
        assert!(matches!(
            actions.as_slice(),
            [MlfoAction::RejectIntent { reason, .. }] if reason.code == RejectCode::UnknownTarget
        ));
    }

    #[test]
    fn unknown_operation_rejected_only_when_strict() {
        let text = "intentid: odd\ntargets:\n  - id: OSS-01\n    operation: defragment\n    operand: SLA\n";
        let intent = parse_intent(text).unwrap();

        let mut strict = oss_node();
        strict.vocab = Vocabulary::new(true);
        let actions = strict.handle_intent(&intent);
        assert!(matches!(
            actions.as_slice(),
            [MlfoAction::RejectIntent { reason, .. }] if reason.code == RejectCode::UnknownOperation
        ));

        let mut lax = oss_node();
        let actions = lax.handle_intent(&intent);
        assert!(matches!(actions.as_slice(), [MlfoAction::Noop { .. }]));
    }

    #[test]
    fn directives_for_descendants_are_forwarded_one_hop() {
        let mut node = oss_node();
        node.set_routes(BTreeMap::from([(dom("Factory-01"), dom("Edge-smart-factory-01"))]));
        let intent = parse_intent(samples::INTENT_C_TEXT).unwrap();
        let actions = node.handle_intent(&intent);
        match actions.as_slice() {
            [MlfoAction::SendIntent { intent: sub, to }] => {
                assert_eq!(*to, dom("Edge-smart-factory-01"));
                assert_eq!(sub.intent_id, "intent_c");
                assert_eq!(sub.targets[0].target_id, dom("Factory-01"));
            }
            other => panic!("expected forward, got {other:?}"),
        }
    }

    #[test]
    fn handle_intent_is_deterministic() {
        let intent = parse_intent(samples::INTENT_B_TEXT).unwrap();
        let node = edge_node_with_offloaded();
        let mut a = node.clone();
        let mut b = node;
        assert_eq!(a.handle_intent(&intent), b.handle_intent(&intent));
    }

    #[test]
    fn emitted_actions_respect_channel_directions() {
        // SendIntent only to children; SendMonitoring only to the parent.
        let mut edge = edge_node_with_offloaded();
        let intent = parse_intent(samples::INTENT_B_TEXT).unwrap();
        let mut actions = edge.handle_intent(&intent);
        let mut factory = factory_node_with_offloaded();
        actions.extend(factory.handle_intent(&parse_intent(samples::INTENT_C_TEXT).unwrap()));
        actions.extend(
            factory
                .handle_pipeline_transition("factory-inference-01", 1, PipelineState::Deploying)
                .unwrap(),
        );
        actions.extend(
            factory
                .handle_pipeline_transition("factory-inference-01", 1, PipelineState::Running)
                .unwrap(),
        );
        for action in &actions {
            match action {
                MlfoAction::SendIntent { to, .. } => {
                    assert!(edge.children.contains(to) || factory.children.contains(to));
                }
                MlfoAction::SendMonitoring { to, .. } => {
                    assert!(
                        edge.parent.as_ref() == Some(to) || factory.parent.as_ref() == Some(to)
                    );
                }
                _ => {}
            }
        }
    }

    #[test]
    fn conflicting_requirement_resolution_both_ways() {
        // Higher-rank (numerically lower) origin wins over a later, lower one.
        let mut node = edge_node_with_offloaded();
        let first = Intent::new(
            "from-root",
            Origin::Mlfo(dom("OSS-01")),
            vec![TargetDirective::new(dom("Edge-smart-factory-01"), "maximise", "capacity")],
        );
        assert!(!node
            .handle_intent(&first)
            .iter()
            .any(|a| matches!(a, MlfoAction::RejectIntent { .. })));

        let challenger = Intent::new(
            "from-self",
            Origin::Mlfo(dom("Edge-smart-factory-01")),
            vec![TargetDirective::new(dom("Edge-smart-factory-01"), "minimise", "capacity")],
        );
        let actions = node.handle_intent(&challenger);
        assert!(matches!(
            actions.as_slice(),
            [
                MlfoAction::ConflictResolved { winner_intent, .. },
                MlfoAction::RejectIntent { reason, .. }
            ] if winner_intent == "from-root" && reason.code == RejectCode::ConflictLoss
        ));
        assert_eq!(node.active_requirements["capacity"].intent_id, "from-root");

        // A higher-priority challenger from the same origin rank replaces the
        // incumbent.
        let stronger = Intent::new(
            "from-root-2",
            Origin::Mlfo(dom("OSS-01")),
            vec![TargetDirective::new(dom("Edge-smart-factory-01"), "minimise", "capacity")],
        )
        .with_priority(5);
        let actions = node.handle_intent(&stronger);
        assert!(actions
            .iter()
            .any(|a| matches!(a, MlfoAction::ConflictResolved { winner_intent, .. } if winner_intent == "from-root-2")));
        assert_eq!(node.active_requirements["capacity"].intent_id, "from-root-2");
    }

    #[test]
    fn static_preference_beats_rank_and_priority() {
        let policy = ConflictPolicy {
            static_preferences: vec![dom("OSS-01")],
            use_priority: true,
            use_rank: true,
        };
        let incumbent = ConflictSide {
            directive: TargetDirective::new(dom("E"), "maximise", "capacity"),
            origin: Origin::Mlfo(dom("OSS-01")),
            origin_rank: 2,
            priority: Some(0),
            intent_id: "a".into(),
        };
        let challenger = ConflictSide {
            directive: TargetDirective::new(dom("E"), "minimise", "capacity"),
            origin: Origin::Mlfo(dom("Edge-01")),
            origin_rank: 0,
            priority: Some(9),
            intent_id: "b".into(),
        };
        assert_eq!(resolve_conflict(&policy, &incumbent, &challenger), Winner::Incumbent);
    }

    #[test]
    fn identical_directives_do_not_conflict() {
        let a = TargetDirective::new(dom("E"), "maintain", "SLA").with_oparam("x", "1");
        let b = a.clone();
        assert!(!directives_conflict(&a, &b));
        let c = TargetDirective::new(dom("E"), "maintain", "SLA").with_oparam("x", "2");
        assert!(directives_conflict(&a, &c));
    }

    #[test]
    fn derive_intent_substitutes_placeholders() {
        let node = oss_node();
        let rule = node.rules[0].clone();
        let event = qos_drop_event("20%");
        let intent = derive_intent(&rule, &Trigger::Event(&event), "fresh-1", &node.domain).unwrap();
        assert_eq!(intent.intent_id, "fresh-1");
        assert_eq!(intent.origin, Origin::Mlfo(dom("OSS-01")));
        assert_eq!(intent.targets[0].oparams.get("expected_drop"), Some("20%"));
    }

    #[test]
    fn derive_intent_fails_on_unresolved_placeholder() {
        let rule = DerivationRule {
            rule_id: "bad".into(),
            when: RuleTrigger::OnEvent { kind: MonitoringEventKind::ThresholdCrossover, metric: None },
            emit: RuleEmit::ChildIntent {
                template: IntentTemplate {
                    targets: vec![DirectiveTemplate {
                        target_id: dom("X"),
                        operation: "set".into(),
                        operand: "QoS".into(),
                        oparams: ParamMap::from_pairs([("v", "{undefined}")]).unwrap(),
                        constraints: ParamMap::new(),
                    }],
                    priority: None,
                },
                to: dom("X"),
            },
        };
        let event = MonitoringEvent::new(dom("A"), 0, MonitoringEventKind::ThresholdCrossover);
        let err = derive_intent(&rule, &Trigger::Event(&event), "f", &dom("A")).unwrap_err();
        assert!(matches!(err, TemplateError::Unresolved { placeholder, .. } if placeholder == "undefined"));
    }

    #[test]
    fn constant_template_is_emitted_verbatim() {
        let node = edge_node_with_offloaded();
        let rule = node.rules[0].clone();
        let intent = parse_intent(samples::INTENT_B_TEXT).unwrap();
        let trigger = Trigger::IntentDirective { intent: &intent, directive: &intent.targets[0] };
        let derived = derive_intent(&rule, &trigger, "f-1", &node.domain).unwrap();
        assert_eq!(derived.directive_summary(), "stop:ml_offload");
        assert!(derived.targets[0].oparams.is_empty());
    }

    #[test]
    fn parse_fraction_handles_percent_and_plain() {
        assert_eq!(parse_fraction("95%"), Some(0.95));
        assert_eq!(parse_fraction("0.5"), Some(0.5));
        assert_eq!(parse_fraction("150%"), None);
        assert_eq!(parse_fraction("n/a"), None);
    }
}
