//! Canonical example intents from the smart-factory scenario, in their exact
//! text form. These double as parser fixtures and as the stimuli of the
//! builtin scenario.

/// Operator intent: keep the smart-factory network's SLA.
pub const INTENT_A_TEXT: &str = include_str!("../data/intent_a.yaml");

/// Derived intent: anticipate a QoS drop at the edge and hold inference
/// accuracy.
pub const INTENT_B_TEXT: &str = include_str!("../data/intent_b.yaml");

/// Derived intent: stop offloading ML tasks out of the factory.
pub const INTENT_C_TEXT: &str = include_str!("../data/intent_c.yaml");
