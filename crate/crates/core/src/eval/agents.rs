//! Scripted evaluation agents and agent selection by name.

use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::env::{Action, DeskPlanner, TermStatus};
use crate::oracles::{
    detect_reflection_marker, AgentStep, HistoryStep, OracleError, Policy, RemoteConfig, RemoteOracles,
    StepContext,
};

/// Index of the first history step the planner judges not useful.
pub fn first_error(planner: &DeskPlanner, history: &[HistoryStep]) -> Option<usize> {
    history
        .iter()
        .position(|h| !planner.is_useful(&h.observation.state, &h.action))
}

fn plan_action(planner: &DeskPlanner, ctx: &StepContext<'_>) -> Action {
    planner
        .useful_actions(&ctx.observation.state)
        .into_iter()
        .next()
        .unwrap_or(Action::Terminate(TermStatus::Failure))
}

fn reflect_step(planner: &DeskPlanner, ctx: &StepContext<'_>, j: usize) -> AgentStep {
    let action = plan_action(planner, ctx);
    AgentStep {
        thought: format!(
            "REFLECT: step {} `{}` did not move the task forward | FIX: continue from the current screen with `{}`.",
            j + 1,
            ctx.history[j].action,
            action
        ),
        action,
        label: None,
    }
}

fn noticed(history: &[HistoryStep], j: usize) -> bool {
    history[j + 1..].iter().any(|h| detect_reflection_marker(&h.output))
}

/// Detects any unacknowledged mistake in its history, says so, and follows
/// the planner from the actual state.
pub struct OracleRecoveryAgent {
    planner: Arc<DeskPlanner>,
}

impl OracleRecoveryAgent {
    pub fn new(planner: Arc<DeskPlanner>) -> Self {
        OracleRecoveryAgent { planner }
    }
}

impl Policy for OracleRecoveryAgent {
    fn id(&self) -> &str {
        "oracle-recovery"
    }

    fn propose_action(&self, ctx: &StepContext<'_>, _rng: &mut dyn RngCore) -> Result<AgentStep, OracleError> {
        if let Some(j) = first_error(&self.planner, ctx.history) {
            if !noticed(ctx.history, j) {
                return Ok(reflect_step(&self.planner, ctx, j));
            }
        }
        let action = plan_action(&self.planner, ctx);
        Ok(AgentStep {
            thought: "Continue with the plan.".into(),
            action,
            label: None,
        })
    }
}

/// Repeats its last action forever.
pub struct FrozenAgent;

impl Policy for FrozenAgent {
    fn id(&self) -> &str {
        "frozen"
    }

    fn propose_action(&self, ctx: &StepContext<'_>, _rng: &mut dyn RngCore) -> Result<AgentStep, OracleError> {
        let action = ctx
            .history
            .last()
            .map(|h| h.action.clone())
            .unwrap_or(Action::Terminate(TermStatus::Failure));
        Ok(AgentStep {
            thought: "Do the same as before.".into(),
            action,
            label: None,
        })
    }
}

/// Recovers with probability `p * decay^d`, where `d` counts the steps
/// taken after its first mistake. The draw happens at the first
/// post-takeover step; a recovering agent behaves like
/// [`OracleRecoveryAgent`], otherwise it behaves like [`FrozenAgent`].
pub struct DecayAgent {
    planner: Arc<DeskPlanner>,
    p: f64,
    decay: f64,
}

impl DecayAgent {
    pub fn new(planner: Arc<DeskPlanner>, p: f64, decay: f64) -> Self {
        DecayAgent { planner, p, decay }
    }

    pub fn recovery_probability(&self, depth: usize) -> f64 {
        self.p * self.decay.powi(depth as i32)
    }
}

impl Policy for DecayAgent {
    fn id(&self) -> &str {
        "decay"
    }

    fn propose_action(&self, ctx: &StepContext<'_>, rng: &mut dyn RngCore) -> Result<AgentStep, OracleError> {
        let Some(j) = first_error(&self.planner, ctx.history) else {
            return OracleRecoveryAgent::new(Arc::clone(&self.planner)).propose_action(ctx, rng);
        };
        if noticed(ctx.history, j) {
            return Ok(AgentStep {
                thought: "Continue with the plan.".into(),
                action: plan_action(&self.planner, ctx),
                label: None,
            });
        }
        let repeating = ctx.history.last().is_some_and(|h| h.output.starts_with(FROZEN_THOUGHT));
        if !repeating {
            let depth = ctx.history.len() - j - 1;
            if rng.gen::<f64>() < self.recovery_probability(depth) {
                return Ok(reflect_step(&self.planner, ctx, j));
            }
        }
        let action = ctx.history.last().map(|h| h.action.clone()).expect("history has an error step");
        Ok(AgentStep {
            thought: FROZEN_THOUGHT.into(),
            action,
            label: None,
        })
    }
}

const FROZEN_THOUGHT: &str = "Repeat the previous step.";

/// Agent selection for `eval-robust --agent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentSpec {
    OracleRecovery,
    Frozen,
    Decay { p: f64, decay: f64 },
    Remote { endpoint: String },
}

impl AgentSpec {
    /// Parses `oracle-recovery`, `frozen`, `decay`, `decay:P` or
    /// `decay:P:D`, or an `http(s)://` endpoint.
    pub fn parse(name: &str) -> Result<Self, String> {
        if name.starts_with("http://") || name.starts_with("https://") {
            return Ok(AgentSpec::Remote {
                endpoint: name.to_string(),
            });
        }
        let mut parts = name.split(':');
        let head = parts.next().unwrap_or_default();
        let nums: Vec<f64> = parts
            .map(|x| x.parse::<f64>().map_err(|e| format!("agent `{name}`: {e}")))
            .collect::<Result<_, _>>()?;
        let spec = match (head, nums.as_slice()) {
            ("oracle-recovery", []) => AgentSpec::OracleRecovery,
            ("frozen", []) => AgentSpec::Frozen,
            ("decay", []) => AgentSpec::Decay { p: 1.0, decay: 0.7 },
            ("decay", [p]) => AgentSpec::Decay { p: *p, decay: 0.7 },
            ("decay", [p, d]) => AgentSpec::Decay { p: *p, decay: *d },
            _ => return Err(format!("unknown agent `{name}`")),
        };
        if let AgentSpec::Decay { p, decay } = spec {
            if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&decay) {
                return Err(format!("agent `{name}`: probabilities must lie in [0, 1]"));
            }
        }
        Ok(spec)
    }

    pub fn name(&self) -> String {
        match self {
            AgentSpec::OracleRecovery => "oracle-recovery".into(),
            AgentSpec::Frozen => "frozen".into(),
            AgentSpec::Decay { p, decay } => format!("decay:{p}:{decay}"),
            AgentSpec::Remote { endpoint } => endpoint.clone(),
        }
    }
}

/// Builds per-task agent instances; a remote agent is shared.
pub struct AgentFactory {
    spec: AgentSpec,
    remote: Option<Arc<RemoteOracles>>,
}

impl AgentFactory {
    pub fn new(spec: AgentSpec, remote_template: &RemoteConfig) -> Self {
        let remote = match &spec {
            AgentSpec::Remote { endpoint } => Some(Arc::new(RemoteOracles::new(RemoteConfig {
                endpoint: endpoint.clone(),
                ..remote_template.clone()
            }))),
            _ => None,
        };
        AgentFactory { spec, remote }
    }

    pub fn spec(&self) -> &AgentSpec {
        &self.spec
    }

    pub fn build(&self, planner: &Arc<DeskPlanner>) -> Arc<dyn Policy> {
        match &self.spec {
            AgentSpec::OracleRecovery => Arc::new(OracleRecoveryAgent::new(Arc::clone(planner))),
            AgentSpec::Frozen => Arc::new(FrozenAgent),
            AgentSpec::Decay { p, decay } => Arc::new(DecayAgent::new(Arc::clone(planner), *p, *decay)),
            AgentSpec::Remote { .. } => Arc::clone(self.remote.as_ref().expect("remote agent")) as Arc<dyn Policy>,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn agent_names_parse() {
        assert_eq!(AgentSpec::parse("frozen").unwrap(), AgentSpec::Frozen);
        assert_eq!(AgentSpec::parse("decay:0.9").unwrap(), AgentSpec::Decay { p: 0.9, decay: 0.7 });
        assert_eq!(
            AgentSpec::parse("http://localhost:9/agent").unwrap(),
            AgentSpec::Remote {
                endpoint: "http://localhost:9/agent".into()
            }
        );
        assert!(AgentSpec::parse("decay:2").is_err());
        assert!(AgentSpec::parse("nope").is_err());
    }
}
