use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{Action, Observation, StateHash};

/// The eleven policy-induced error modes used for injection and for
/// benchmark case labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorType {
    IncorrectUiElement,
    GroundingFailure,
    IneffectiveAction,
    TypingError,
    MissNecessaryStep,
    IncorrectToolUsage,
    WrongTarget,
    IncorrectParameter,
    MisunderstandObjective,
    FailToTerminate,
    LackOfKnowledge,
}

impl ErrorType {
    pub const ALL: [ErrorType; 11] = [
        ErrorType::IncorrectUiElement,
        ErrorType::GroundingFailure,
        ErrorType::IneffectiveAction,
        ErrorType::TypingError,
        ErrorType::MissNecessaryStep,
        ErrorType::IncorrectToolUsage,
        ErrorType::WrongTarget,
        ErrorType::IncorrectParameter,
        ErrorType::MisunderstandObjective,
        ErrorType::FailToTerminate,
        ErrorType::LackOfKnowledge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorType::IncorrectUiElement => "incorrect_ui_element",
            ErrorType::GroundingFailure => "grounding_failure",
            ErrorType::IneffectiveAction => "ineffective_action",
            ErrorType::TypingError => "typing_error",
            ErrorType::MissNecessaryStep => "miss_necessary_step",
            ErrorType::IncorrectToolUsage => "incorrect_tool_usage",
            ErrorType::WrongTarget => "wrong_target",
            ErrorType::IncorrectParameter => "incorrect_parameter",
            ErrorType::MisunderstandObjective => "misunderstand_objective",
            ErrorType::FailToTerminate => "fail_to_terminate",
            ErrorType::LackOfKnowledge => "lack_of_knowledge",
        }
    }
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ground-truth record of why a scripted actor chose an action. Carried on
/// tree edges; critics never read it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepKind {
    OnPlan,
    Injected { error: ErrorType },
    /// Acting on a stale belief after an unnoticed error.
    Perseverate,
    /// Noticed an earlier error and replanned.
    Recovery,
    /// First step of a guidance-conditioned recovery rollout.
    Guided,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepLabel {
    #[serde(flatten)]
    pub kind: StepKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intended: Option<Action>,
    /// Whether the action made progress in the true state.
    pub correct: bool,
}

impl StepLabel {
    pub fn injected_error(&self) -> Option<ErrorType> {
        match self.kind {
            StepKind::Injected { error } => Some(error),
            _ => None,
        }
    }

    pub fn clears_confusion(&self) -> bool {
        matches!(self.kind, StepKind::Recovery | StepKind::Guided)
    }
}

/// One agent decision: free-text reasoning plus the action it commits to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentStep {
    pub thought: String,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<StepLabel>,
}

impl AgentStep {
    /// Full step output as stored on tree edges and shown in histories.
    pub fn output(&self) -> String {
        format!("{}\nAction: {}", self.thought, self.action)
    }
}

/// A completed step as seen by later steps: the observation it was taken
/// from, what the agent wrote, and the action executed.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryStep {
    pub observation: Arc<Observation>,
    pub output: String,
    pub action: Action,
    pub label: Option<StepLabel>,
}

/// Observations o_1..o_n with the n-1 actions between them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub steps: Vec<HistoryStep>,
    pub final_observation: Arc<Observation>,
}

impl TrajectoryRecord {
    /// Number of observations (nodes) on the trajectory.
    pub fn len(&self) -> usize {
        self.steps.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn observation(&self, i: usize) -> &Arc<Observation> {
        if i < self.steps.len() {
            &self.steps[i].observation
        } else {
            &self.final_observation
        }
    }

    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action.clone()).collect()
    }

    pub fn labels(&self) -> Vec<Option<StepLabel>> {
        self.steps.iter().map(|s| s.label.clone()).collect()
    }
}

pub struct StepContext<'a> {
    pub instruction: &'a str,
    pub observation: &'a Observation,
    pub history: &'a [HistoryStep],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionSummary {
    pub step: usize,
    pub action: Action,
    pub from: StateHash,
    pub to: StateHash,
    pub changes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MilestoneCheck {
    pub procedure: usize,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Diagnosis {
    pub milestones: Vec<MilestoneCheck>,
    pub goal_met: bool,
    pub success: bool,
    pub rationale: String,
}

/// The reward model's reusable artifact: procedures, per-step transition
/// summaries and a diagnosis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct TrajectoryExperience {
    pub procedures: Vec<String>,
    pub transitions: Vec<TransitionSummary>,
    pub diagnosis: Diagnosis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardVerdict {
    pub r_tau: u8,
    pub experience: TrajectoryExperience,
}

impl RewardVerdict {
    pub fn success(&self) -> bool {
        self.r_tau == 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressVerdict {
    pub c: u8,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateErrorProposal {
    /// 1-based index of the erroneous step; the error node is o_step.
    pub step: usize,
    pub guidance: String,
    pub priority: f64,
}

/// Error injection knobs for scripted actors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ErrorInjectionProfile {
    /// Per-step injection probability for each error type.
    pub rates: BTreeMap<ErrorType, f64>,
    /// Errors forced at specific 1-based step indices.
    pub forced: BTreeMap<u32, ErrorType>,
    /// Per-step probability of noticing an earlier error and replanning.
    pub recovery_competence: f64,
}

impl ErrorInjectionProfile {
    pub fn clean() -> Self {
        Self::default()
    }

    /// The same rate for all eleven types.
    pub fn uniform(rate: f64, recovery_competence: f64) -> Self {
        ErrorInjectionProfile {
            rates: ErrorType::ALL.iter().map(|t| (*t, rate)).collect(),
            forced: BTreeMap::new(),
            recovery_competence,
        }
    }

    pub fn with_forced(mut self, step: u32, error: ErrorType) -> Self {
        self.forced.insert(step, error);
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if let Some((t, p)) = self.rates.iter().find(|(_, p)| !ok(**p)) {
            return Err(format!("rate for {t} is {p}, outside [0,1]"));
        }
        if !ok(self.recovery_competence) {
            return Err(format!(
                "recovery_competence {} outside [0,1]",
                self.recovery_competence
            ));
        }
        Ok(())
    }
}
