//! ML pipelines as chains of logical nodes, with placement and a lifecycle
//! state machine supporting deploy, teardown, and make-before-break
//! redeployment.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intent::{DomainId, TargetDirective};

/// The six logical node kinds a pipeline chains together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Source,
    Collector,
    Preprocessor,
    Model,
    Policy,
    Sink,
}

impl NodeKind {
    /// The full chain in canonical order.
    pub fn standard_chain() -> Vec<NodeKind> {
        vec![
            NodeKind::Source,
            NodeKind::Collector,
            NodeKind::Preprocessor,
            NodeKind::Model,
            NodeKind::Policy,
            NodeKind::Sink,
        ]
    }
}

/// Immutable description of a pipeline: what it is for, which model artifact
/// it runs, and who owns it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub pipeline_id: String,
    /// The operand this pipeline serves (e.g. `ml_inference`, `SLA`).
    pub purpose: String,
    pub nodes: Vec<NodeKind>,
    pub model_ref: String,
    pub owner_domain: DomainId,
    pub min_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("pipeline `{0}`: node chain must start with a source and end with a sink")]
    BadChainEnds(String),
    #[error("pipeline `{0}`: node chain must contain exactly one model, found {1}")]
    ModelCount(String, usize),
    #[error("pipeline `{0}`: min_accuracy {1} outside [0, 1]")]
    AccuracyRange(String, f64),
    #[error("pipeline id is empty")]
    EmptyId,
}

impl PipelineSpec {
    pub fn new(
        pipeline_id: impl Into<String>,
        purpose: impl Into<String>,
        nodes: Vec<NodeKind>,
        model_ref: impl Into<String>,
        owner_domain: DomainId,
        min_accuracy: Option<f64>,
    ) -> Result<Self, SpecError> {
        let spec = PipelineSpec {
            pipeline_id: pipeline_id.into(),
            purpose: purpose.into(),
            nodes,
            model_ref: model_ref.into(),
            owner_domain,
            min_accuracy,
        };
        spec.check()?;
        Ok(spec)
    }

    /// A spec with the standard six-node chain.
    pub fn standard(
        pipeline_id: impl Into<String>,
        purpose: impl Into<String>,
        model_ref: impl Into<String>,
        owner_domain: DomainId,
    ) -> Self {
        PipelineSpec::new(pipeline_id, purpose, NodeKind::standard_chain(), model_ref, owner_domain, None)
            .expect("standard chain is valid")
    }

    pub fn check(&self) -> Result<(), SpecError> {
        if self.pipeline_id.is_empty() {
            return Err(SpecError::EmptyId);
        }
        let ends_ok = self.nodes.first() == Some(&NodeKind::Source)
            && self.nodes.last() == Some(&NodeKind::Sink);
        if !ends_ok {
            return Err(SpecError::BadChainEnds(self.pipeline_id.clone()));
        }
        let models = self.nodes.iter().filter(|n| **n == NodeKind::Model).count();
        if models != 1 {
            return Err(SpecError::ModelCount(self.pipeline_id.clone(), models));
        }
        if let Some(acc) = self.min_accuracy {
            if !(0.0..=1.0).contains(&acc) {
                return Err(SpecError::AccuracyRange(self.pipeline_id.clone(), acc));
            }
        }
        Ok(())
    }
}

/// Lifecycle states. The only legal edges are
/// requested→deploying, deploying→running, deploying→terminated (deploy
/// failure), running→tearing_down, and tearing_down→terminated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineState {
    Requested,
    Deploying,
    Running,
    TearingDown,
    Terminated,
}

impl PipelineState {
    pub const ALL: [PipelineState; 5] = [
        PipelineState::Requested,
        PipelineState::Deploying,
        PipelineState::Running,
        PipelineState::TearingDown,
        PipelineState::Terminated,
    ];

    pub fn can_transition_to(self, to: PipelineState) -> bool {
        use PipelineState::*;
        matches!(
            (self, to),
            (Requested, Deploying)
                | (Deploying, Running)
                | (Deploying, Terminated)
                | (Running, TearingDown)
                | (TearingDown, Terminated)
        )
    }

    /// True for states in which the pipeline still occupies its placement.
    pub fn is_live(self) -> bool {
        !matches!(self, PipelineState::TearingDown | PipelineState::Terminated)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineState::Requested => "requested",
            PipelineState::Deploying => "deploying",
            PipelineState::Running => "running",
            PipelineState::TearingDown => "tearing_down",
            PipelineState::Terminated => "terminated",
        }
    }
}

impl fmt::Display for PipelineState {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("illegal pipeline transition {from} -> {to}")]
pub struct TransitionError {
    pub from: PipelineState,
    pub to: PipelineState,
}

/// A running (or pending, or finished) copy of a spec at some placement.
/// `generation` counts redeployments of the same pipeline id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineInstance {
    pub spec: PipelineSpec,
    pub placement: DomainId,
    pub state: PipelineState,
    pub generation: u32,
}

impl PipelineInstance {
    pub fn new(spec: PipelineSpec, placement: DomainId, state: PipelineState, generation: u32) -> Self {
        PipelineInstance { spec, placement, state, generation }
    }

    pub fn pipeline_id(&self) -> &str {
        &self.spec.pipeline_id
    }

    /// Running outside its owner's domain.
    pub fn is_offloaded(&self) -> bool {
        self.placement != self.spec.owner_domain
    }

    /// Return a copy in the new state, or an error if the edge is illegal
    /// (the instance itself is untouched either way).
    pub fn transition(&self, to: PipelineState) -> Result<PipelineInstance, TransitionError> {
        if !self.state.can_transition_to(to) {
            return Err(TransitionError { from: self.state, to });
        }
        let mut next = self.clone();
        next.state = to;
        Ok(next)
    }
}

/// Select the instances a directive applies to, preserving input order.
///
/// `ml_offload` selects by the offloading relationship (instances running
/// away from their owner, where the owner is the directive's target); every
/// other operand selects by purpose.
pub fn affected_pipelines<'a>(
    pipelines: &'a [PipelineInstance],
    directive: &TargetDirective,
) -> Vec<&'a PipelineInstance> {
    pipelines
        .iter()
        .filter(|p| {
            if directive.operand == "ml_offload" {
                p.is_offloaded() && p.spec.owner_domain == directive.target_id
            } else {
                p.spec.purpose == directive.operand
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("cannot redeploy `{id}`: instance is {state}, not running")]
    NotRunning { id: String, state: PipelineState },
    #[error("cannot redeploy `{id}`: already placed at `{placement}`")]
    NoopMove { id: String, placement: DomainId },
}

/// A make-before-break redeployment: deploy the replacement first, tear the
/// original down only after the replacement reports running.
#[derive(Debug, Clone, PartialEq)]
pub struct RedeployPlan {
    /// Fresh instance at the new placement, next generation, requested.
    pub deploy: PipelineInstance,
    /// The instance to retire once the replacement runs.
    pub teardown_target: PipelineInstance,
}

pub fn redeploy_plan(
    instance: &PipelineInstance,
    new_placement: DomainId,
) -> Result<RedeployPlan, PlanError> {
    if instance.state != PipelineState::Running {
        return Err(PlanError::NotRunning {
            id: instance.pipeline_id().to_string(),
            state: instance.state,
        });
    }
    if instance.placement == new_placement {
        return Err(PlanError::NoopMove {
            id: instance.pipeline_id().to_string(),
            placement: new_placement,
        });
    }
    Ok(RedeployPlan {
        deploy: PipelineInstance::new(
            instance.spec.clone(),
            new_placement,
            PipelineState::Requested,
            instance.generation + 1,
        ),
        teardown_target: instance.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dom(s: &str) -> DomainId {
        DomainId::new(s).unwrap()
    }

    fn inst(id: &str, purpose: &str, owner: &str, placement: &str, state: PipelineState) -> PipelineInstance {
        PipelineInstance::new(
            PipelineSpec::standard(id, purpose, "model-x", dom(owner)),
            dom(placement),
            state,
            0,
        )
    }

    #[test]
    fn legal_and_illegal_edges() {
        let running = inst("p", "ml_inference", "F", "E", PipelineState::Running);
        assert!(running.transition(PipelineState::TearingDown).is_ok());
        let done = inst("p", "ml_inference", "F", "E", PipelineState::Terminated);
        let err = done.transition(PipelineState::Running).unwrap_err();
        assert_eq!(err.from, PipelineState::Terminated);
        assert_eq!(done.state, PipelineState::Terminated);
    }

    #[test]
    fn exhaustive_transition_table() {
        // Independent edge list, stated directly rather than via
        // can_transition_to, so the table check cannot drift with the
        // implementation.
        use PipelineState::*;
        let legal = [
            (Requested, Deploying),
            (Deploying, Running),
            (Deploying, Terminated),
            (Running, TearingDown),
            (TearingDown, Terminated),
        ];
        let mut accepted = Vec::new();
        for from in PipelineState::ALL {
            for to in PipelineState::ALL {
                let i = inst("p", "x", "F", "F", from);
                if i.transition(to).is_ok() {
                    accepted.push((from, to));
                }
            }
        }
        assert_eq!(accepted.len(), 5);
        for edge in legal {
            assert!(accepted.contains(&edge), "missing legal edge {edge:?}");
        }
    }

    #[test]
    fn spec_invariants() {
        assert!(PipelineSpec::new(
            "p",
            "x",
            vec![NodeKind::Model, NodeKind::Sink],
            "m",
            dom("F"),
            None
        )
        .is_err());
        assert!(PipelineSpec::new(
            "p",
            "x",
            vec![NodeKind::Source, NodeKind::Sink],
            "m",
            dom("F"),
            None
        )
        .is_err());
        assert!(PipelineSpec::new("p", "x", NodeKind::standard_chain(), "m", dom("F"), Some(1.2)).is_err());
        assert!(PipelineSpec::new("p", "x", NodeKind::standard_chain(), "m", dom("F"), Some(0.95)).is_ok());
    }

    #[test]
    fn offload_directive_selects_offloaded_instances_of_target_owner() {
        let offloaded = inst("p1", "ml_inference", "Factory-01", "Edge-01", PipelineState::Running);
        let local = inst("p2", "ml_inference", "Factory-01", "Factory-01", PipelineState::Running);
        let foreign = inst("p3", "ml_inference", "Other-01", "Edge-01", PipelineState::Running);
        let pipelines = vec![offloaded.clone(), local, foreign];
        let d = TargetDirective::new(dom("Factory-01"), "stop", "ml_offload");
        let selected = affected_pipelines(&pipelines, &d);
        assert_eq!(selected, vec![&offloaded]);
    }

    #[test]
    fn empty_input_selects_nothing() {
        let d = TargetDirective::new(dom("Factory-01"), "stop", "ml_offload");
        assert!(affected_pipelines(&[], &d).is_empty());
    }

    #[test]
    fn selection_matches_independent_filter() {
        // Brute-force oracle written as a direct restatement of the rule.
        let pipelines = vec![
            inst("a", "ml_inference", "F", "E", PipelineState::Running),
            inst("b", "SLA", "O", "O", PipelineState::Running),
            inst("c", "ml_inference", "F", "F", PipelineState::Running),
            inst("d", "QoS", "E", "O", PipelineState::Deploying),
            inst("e", "ml_inference", "X", "E", PipelineState::Running),
            inst("f", "SLA", "F", "E", PipelineState::Terminated),
        ];
        let directives = [
            TargetDirective::new(dom("F"), "stop", "ml_offload"),
            TargetDirective::new(dom("F"), "maintain", "SLA"),
            TargetDirective::new(dom("O"), "maintain", "ml_inference"),
        ];
        for d in &directives {
            let expected: Vec<&PipelineInstance> = pipelines
                .iter()
                .filter(|p| match d.operand.as_str() {
                    "ml_offload" => p.placement != p.spec.owner_domain && p.spec.owner_domain == d.target_id,
                    other => p.spec.purpose == other,
                })
                .collect();
            assert_eq!(affected_pipelines(&pipelines, d), expected);
        }
    }

    #[test]
    fn redeploy_plan_moves_and_preserves_spec() {
        let offloaded = inst("p1", "ml_inference", "Factory-01", "Edge-01", PipelineState::Running);
        let plan = redeploy_plan(&offloaded, dom("Factory-01")).unwrap();
        assert_eq!(plan.deploy.placement, dom("Factory-01"));
        assert_eq!(plan.deploy.state, PipelineState::Requested);
        assert_eq!(plan.deploy.generation, 1);
        assert!(!plan.deploy.is_offloaded());
        assert_eq!(plan.deploy.spec, offloaded.spec);
        assert_eq!(plan.teardown_target, offloaded);
    }

    #[test]
    fn redeploy_plan_rejects_degenerate_and_premature_moves() {
        let offloaded = inst("p1", "ml_inference", "Factory-01", "Edge-01", PipelineState::Running);
        assert!(matches!(
            redeploy_plan(&offloaded, dom("Edge-01")),
            Err(PlanError::NoopMove { .. })
        ));
        let deploying = inst("p1", "ml_inference", "Factory-01", "Edge-01", PipelineState::Deploying);
        assert!(matches!(
            redeploy_plan(&deploying, dom("Factory-01")),
            Err(PlanError::NotRunning { .. })
        ));
    }

    fn arb_state() -> impl Strategy<Value = PipelineState> {
        prop::sample::select(PipelineState::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn random_transition_sequences_stay_legal(
            start in arb_state(),
            attempts in prop::collection::vec(arb_state(), 0..40)
        ) {
            use PipelineState::*;
            let legal = [
                (Requested, Deploying),
                (Deploying, Running),
                (Deploying, Terminated),
                (Running, TearingDown),
                (TearingDown, Terminated),
            ];
            let mut current = inst("p", "x", "F", "F", start);
            for to in attempts {
                match current.transition(to) {
                    Ok(next) => {
                        prop_assert!(legal.contains(&(current.state, to)));
                        current = next;
                    }
                    Err(e) => {
                        prop_assert!(!legal.contains(&(e.from, e.to)));
                        prop_assert_eq!(e.from, current.state);
                    }
                }
            }
        }

        #[test]
        fn affected_is_an_order_preserving_idempotent_subset(
            purposes in prop::collection::vec(prop::sample::select(vec!["SLA", "QoS", "ml_inference"]), 0..8),
            operand in prop::sample::select(vec!["SLA", "QoS", "ml_inference", "ml_offload"]),
        ) {
            let pipelines: Vec<PipelineInstance> = purposes
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let placement = if i % 2 == 0 { "Edge-01" } else { "Factory-01" };
                    inst(&format!("p{i}"), p, "Factory-01", placement, PipelineState::Running)
                })
                .collect();
            let d = TargetDirective::new(dom("Factory-01"), "stop", operand);
            let selected = affected_pipelines(&pipelines, &d);
            // subset, order preserving
            let mut last_index = None;
            for s in &selected {
                let idx = pipelines.iter().position(|p| std::ptr::eq(p, *s)).unwrap();
                if let Some(prev) = last_index {
                    prop_assert!(idx > prev);
                }
                last_index = Some(idx);
            }
            // idempotent under repetition
            let again = affected_pipelines(&pipelines, &d);
            prop_assert_eq!(selected, again);
        }
    }
}
