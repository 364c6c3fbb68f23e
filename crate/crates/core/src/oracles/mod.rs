//! Oracle contracts: policy, reward model, critics, reflection identifier,
//! reflector and recovery actor, with scripted ScriptedDesk implementations
//! and an HTTP adapter for remote judges.

pub mod judges;
pub mod policy;
pub mod remote;
pub mod types;

use std::sync::Arc;

use rand::RngCore;
use thiserror::Error;

use crate::env::{Action, DeskApp, DeskPlanner, Observation, TaskSpec};

pub use judges::{
    detect_reflection_marker, ScriptedActionCritic, ScriptedProgressCritic, ScriptedReflector,
    ScriptedRewardModel, MarkerReflectionIdentifier,
};
pub use policy::{ScriptedPolicy, ScriptedRecoveryActor};
pub use remote::{RemoteConfig, RemoteJudge, RemoteOracles, WIRE_VERSION};
pub use types::{
    AgentStep, CandidateErrorProposal, Diagnosis, ErrorInjectionProfile, ErrorType, HistoryStep,
    MilestoneCheck, ProgressVerdict, RewardVerdict, StepContext, StepKind, StepLabel,
    TrajectoryExperience, TrajectoryRecord, TransitionSummary,
};

/// Default number of reflector proposals per failed trajectory.
pub const DEFAULT_K_CAND: usize = 2;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("judge unavailable: {0}")]
    JudgeUnavailable(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
}

pub trait Policy: Send + Sync {
    fn id(&self) -> &str;
    fn propose_action(
        &self,
        ctx: &StepContext<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<AgentStep, OracleError>;
}

pub trait RewardModel: Send + Sync {
    fn judge_trajectory(
        &self,
        instruction: &str,
        trajectory: &TrajectoryRecord,
    ) -> Result<RewardVerdict, OracleError>;
}

pub trait ProgressCritic: Send + Sync {
    fn assess_progress(
        &self,
        instruction: &str,
        observation: &Observation,
        action: &Action,
        history: &[HistoryStep],
    ) -> Result<ProgressVerdict, OracleError>;
}

pub trait ActionCritic: Send + Sync {
    fn verify_action(
        &self,
        before: &Observation,
        action: &Action,
        after: &Observation,
    ) -> Result<u8, OracleError>;
}

pub trait ReflectionIdentifier: Send + Sync {
    fn detect_reflection(
        &self,
        instruction: &str,
        history: &[HistoryStep],
        step_output: &str,
    ) -> Result<u8, OracleError>;
}

pub trait Reflector: Send + Sync {
    fn propose_error_candidates(
        &self,
        instruction: &str,
        failed: &TrajectoryRecord,
        verdict: &RewardVerdict,
        neighbor_experiences: &[&TrajectoryExperience],
        k_cand: usize,
    ) -> Result<Vec<CandidateErrorProposal>, OracleError>;
}

pub trait RecoveryActor: Send + Sync {
    fn propose_recovery_action(
        &self,
        ctx: &StepContext<'_>,
        guidance: &str,
        rng: &mut dyn RngCore,
    ) -> Result<AgentStep, OracleError>;

    /// Steps after the guided one.
    fn continue_rollout(
        &self,
        ctx: &StepContext<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<AgentStep, OracleError>;
}

/// Every oracle a co-expansion run needs.
#[derive(Clone)]
pub struct OracleSet {
    pub policy: Arc<dyn Policy>,
    pub reward: Arc<dyn RewardModel>,
    pub progress: Arc<dyn ProgressCritic>,
    pub action: Arc<dyn ActionCritic>,
    pub reflection: Arc<dyn ReflectionIdentifier>,
    pub reflector: Arc<dyn Reflector>,
    pub recovery: Arc<dyn RecoveryActor>,
}

impl OracleSet {
    /// Fully scripted oracles over one ScriptedDesk task.
    pub fn scripted(
        task: &TaskSpec,
        app: Arc<DeskApp>,
        policy_profile: ErrorInjectionProfile,
        recovery_profile: ErrorInjectionProfile,
    ) -> Self {
        let planner = Arc::new(DeskPlanner::new(task, app));
        Self::scripted_with_planner(task, planner, policy_profile, recovery_profile)
    }

    pub fn scripted_with_planner(
        task: &TaskSpec,
        planner: Arc<DeskPlanner>,
        policy_profile: ErrorInjectionProfile,
        recovery_profile: ErrorInjectionProfile,
    ) -> Self {
        OracleSet {
            policy: Arc::new(ScriptedPolicy::new(
                "scripted-policy",
                Arc::clone(&planner),
                policy_profile,
            )),
            reward: Arc::new(ScriptedRewardModel::new(task, Arc::clone(&planner))),
            progress: Arc::new(ScriptedProgressCritic::new(Arc::clone(&planner))),
            action: Arc::new(ScriptedActionCritic::new(Arc::clone(planner.app()))),
            reflection: Arc::new(MarkerReflectionIdentifier),
            reflector: Arc::new(ScriptedReflector::new(Arc::clone(&planner))),
            recovery: Arc::new(ScriptedRecoveryActor::new(planner, recovery_profile)),
        }
    }

    /// Replaces the judging roles with a remote adapter; actors stay as they
    /// are.
    pub fn with_remote_judges(mut self, remote: Arc<RemoteOracles>) -> Self {
        self.reward = remote.clone();
        self.progress = remote.clone();
        self.action = remote.clone();
        self.reflection = remote.clone();
        self.reflector = remote;
        self
    }
}
