//! Scripted judges. Each reads ground truth from the task and the planner
//! and never looks at step labels.

use std::sync::{Arc, OnceLock};

use regex::Regex;

use super::policy::describe;
use super::types::{
    CandidateErrorProposal, Diagnosis, HistoryStep, MilestoneCheck, ProgressVerdict,
    RewardVerdict, TrajectoryExperience, TrajectoryRecord, TransitionSummary,
};
use super::{ActionCritic, OracleError, ProgressCritic, ReflectionIdentifier, Reflector, RewardModel};
use crate::env::desk::all_hold;
use crate::env::{apply, Action, Cond, DeskApp, DeskPlanner, DeskState, Observation, TaskSpec, TermStatus};

/// True iff the text holds a `REFLECT: <error target> | FIX: <plan>` line
/// with both parts non-empty.
pub fn detect_reflection_marker(text: &str) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?m)^\s*REFLECT:\s*(\S[^|]*?)\s*\|\s*FIX:\s*(\S.*?)\s*$").expect("valid regex")
    });
    re.is_match(text)
}

/// Human-readable differences between two states.
pub fn state_changes(before: &DeskState, after: &DeskState) -> Vec<String> {
    let mut out = Vec::new();
    for (k, v) in &after.vars {
        let old = before.vars.get(k).map(String::as_str).unwrap_or("");
        if old != v {
            out.push(format!("{k}: {old:?} -> {v:?}"));
        }
    }
    for (k, old) in &before.vars {
        if !after.vars.contains_key(k) {
            out.push(format!("{k}: {old:?} -> \"\""));
        }
    }
    if before.focus != after.focus {
        out.push(format!(
            "focus: {} -> {}",
            before.focus.as_deref().unwrap_or("none"),
            after.focus.as_deref().unwrap_or("none")
        ));
    }
    if before.scroll != after.scroll {
        out.push(format!("scroll: {} -> {}", before.scroll, after.scroll));
    }
    if after.popups > before.popups {
        out.push("unexpected notification popup".to_string());
    }
    if before.status != after.status {
        out.push(format!("status: {:?} -> {:?}", before.status, after.status).to_lowercase());
    }
    out
}

fn check_integrity(traj: &TrajectoryRecord) -> Result<(), OracleError> {
    for i in 0..traj.len() {
        let o = traj.observation(i);
        if o.state.digest() != o.state_hash {
            return Err(OracleError::Integrity(format!(
                "observation {} does not match its hash {}",
                i + 1,
                o.state_hash
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ScriptedRewardModel {
    procedures: Vec<String>,
    milestones: Vec<Vec<Cond>>,
    planner: Arc<DeskPlanner>,
}

impl ScriptedRewardModel {
    pub fn new(task: &TaskSpec, planner: Arc<DeskPlanner>) -> Self {
        ScriptedRewardModel {
            procedures: task.milestones.iter().map(|m| m.description.clone()).collect(),
            milestones: task.milestones.iter().map(|m| m.predicate.clone()).collect(),
            planner,
        }
    }
}

impl RewardModel for ScriptedRewardModel {
    fn judge_trajectory(
        &self,
        _instruction: &str,
        traj: &TrajectoryRecord,
    ) -> Result<RewardVerdict, OracleError> {
        check_integrity(traj)?;
        let transitions = traj
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let to = traj.observation(i + 1);
                TransitionSummary {
                    step: i + 1,
                    action: s.action.clone(),
                    from: s.observation.state_hash,
                    to: to.state_hash,
                    changes: state_changes(&s.observation.state, &to.state),
                }
            })
            .collect();

        let n = self.milestones.len();
        let held: Vec<bool> = self
            .milestones
            .iter()
            .map(|m| (0..traj.len()).any(|i| all_hold(m, &traj.observation(i).state)))
            .collect();
        let mut complete = vec![false; n];
        let mut later = false;
        for m in (0..n).rev() {
            later |= held[m];
            complete[m] = later;
        }
        let final_state = &traj.final_observation.state;
        let goal_met = self.planner.goal_holds(final_state);
        let terminated = traj.steps.last().map(|s| &s.action);
        let rationale = match (goal_met, terminated) {
            (true, Some(Action::Terminate(TermStatus::Success))) => {
                "The final state satisfies every milestone and the agent finished.".to_string()
            }
            (true, _) => "The final state satisfies every milestone.".to_string(),
            (false, _) => {
                let missing = self
                    .planner
                    .next_milestone(final_state)
                    .map(|m| self.procedures[m].clone())
                    .unwrap_or_default();
                format!("The final state does not satisfy: {missing}.")
            }
        };
        let experience = TrajectoryExperience {
            procedures: self.procedures.clone(),
            transitions,
            diagnosis: Diagnosis {
                milestones: complete
                    .iter()
                    .enumerate()
                    .map(|(procedure, &complete)| MilestoneCheck {
                        procedure,
                        complete,
                    })
                    .collect(),
                goal_met,
                success: goal_met,
                rationale,
            },
        };
        Ok(RewardVerdict {
            r_tau: goal_met as u8,
            experience,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedProgressCritic {
    planner: Arc<DeskPlanner>,
}

impl ScriptedProgressCritic {
    pub fn new(planner: Arc<DeskPlanner>) -> Self {
        ScriptedProgressCritic { planner }
    }

    pub fn verdict(&self, state: &DeskState, action: &Action) -> ProgressVerdict {
        let v = |c: u8, reason: &str| ProgressVerdict {
            c,
            reason: reason.to_string(),
        };
        if !state.is_running() {
            return v(0, "episode already over");
        }
        let at_goal = self.planner.goal_holds(state);
        match action {
            Action::Terminate(TermStatus::Success) if at_goal => v(1, "goal met; finishing is correct"),
            Action::Terminate(TermStatus::Success) => v(0, "premature termination"),
            Action::Terminate(TermStatus::Failure) => v(0, "gives up on a solvable task"),
            _ if at_goal => v(0, "goal met; should terminate"),
            a if self.planner.is_useful(state, a) => v(1, "on plan"),
            a if apply(self.planner.app(), state, a) == *state => v(0, "ineffective"),
            _ => v(0, "off plan"),
        }
    }
}

impl ProgressCritic for ScriptedProgressCritic {
    fn assess_progress(
        &self,
        _instruction: &str,
        observation: &Observation,
        action: &Action,
        _history: &[HistoryStep],
    ) -> Result<ProgressVerdict, OracleError> {
        Ok(self.verdict(&observation.state, action))
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedActionCritic {
    app: Arc<DeskApp>,
}

impl ScriptedActionCritic {
    pub fn new(app: Arc<DeskApp>) -> Self {
        ScriptedActionCritic { app }
    }
}

impl ActionCritic for ScriptedActionCritic {
    fn verify_action(
        &self,
        before: &Observation,
        action: &Action,
        after: &Observation,
    ) -> Result<u8, OracleError> {
        let expected = apply(&self.app, &before.state, action).digest();
        Ok((expected == after.state_hash) as u8)
    }
}

/// Keys on the `REFLECT: ... | FIX: ...` marker.
#[derive(Debug, Clone, Copy, Default)]
pub struct MarkerReflectionIdentifier;

impl ReflectionIdentifier for MarkerReflectionIdentifier {
    fn detect_reflection(
        &self,
        _instruction: &str,
        _history: &[HistoryStep],
        step_output: &str,
    ) -> Result<u8, OracleError> {
        Ok(detect_reflection_marker(step_output) as u8)
    }
}

/// Proposes the first bad step of each error episode. A step is bad when the
/// progress critic or the action critic rejects it; an episode ends at a
/// reflection marker, so an error noticed and then repeated yields a second
/// proposal.
#[derive(Debug, Clone)]
pub struct ScriptedReflector {
    planner: Arc<DeskPlanner>,
    progress: ScriptedProgressCritic,
    action: ScriptedActionCritic,
}

impl ScriptedReflector {
    pub fn new(planner: Arc<DeskPlanner>) -> Self {
        ScriptedReflector {
            progress: ScriptedProgressCritic::new(Arc::clone(&planner)),
            action: ScriptedActionCritic::new(Arc::clone(planner.app())),
            planner,
        }
    }

    fn guidance(&self, state: &DeskState, bad: &Action) -> String {
        let good = self
            .planner
            .useful_actions(state)
            .into_iter()
            .next()
            .unwrap_or(Action::Terminate(TermStatus::Failure));
        let goal = match self.planner.next_milestone(state) {
            Some(m) => format!("work toward milestone {} of {}", m + 1, self.planner.milestone_count()),
            None => "finish the task".to_string(),
        };
        format!(
            "Instead of `{bad}`, perform `{good}` ({}) to {goal}.",
            describe(&self.planner, &good)
        )
    }

    fn priority(&self, obs: &Observation, neighbors: &[&TrajectoryExperience]) -> f64 {
        let total = self.planner.milestone_count().max(1) as f64;
        let met = self.planner.milestones_met(&obs.state) as f64;
        let witnessed = neighbors.iter().any(|e| {
            e.diagnosis.success && e.transitions.iter().any(|t| t.from == obs.state_hash)
        });
        let p = 0.2 + 0.5 * met / total + if witnessed { 0.3 } else { 0.0 };
        p.min(1.0)
    }
}

impl Reflector for ScriptedReflector {
    fn propose_error_candidates(
        &self,
        _instruction: &str,
        failed: &TrajectoryRecord,
        verdict: &RewardVerdict,
        neighbors: &[&TrajectoryExperience],
        k_cand: usize,
    ) -> Result<Vec<CandidateErrorProposal>, OracleError> {
        if verdict.r_tau != 0 {
            return Err(OracleError::ContractViolation(
                "reflector called on a successful trajectory".to_string(),
            ));
        }
        let mut out = Vec::new();
        let mut armed = true;
        for (i, s) in failed.steps.iter().enumerate() {
            if out.len() >= k_cand {
                break;
            }
            if detect_reflection_marker(&s.output) {
                armed = true;
            }
            let after = failed.observation(i + 1);
            let bad = self.progress.verdict(&s.observation.state, &s.action).c == 0
                || self.action.verify_action(&s.observation, &s.action, after)? == 0;
            if bad && armed {
                armed = false;
                out.push(CandidateErrorProposal {
                    step: i + 1,
                    guidance: self.guidance(&s.observation.state, &s.action),
                    priority: self.priority(&s.observation, neighbors),
                });
            }
        }
        if out.is_empty() && k_cand > 0 {
            if let Some(s) = failed.steps.last() {
                out.push(CandidateErrorProposal {
                    step: failed.steps.len(),
                    guidance: self.guidance(&s.observation.state, &s.action),
                    priority: 0.1,
                });
            }
        }
        Ok(out)
    }
}
