//! Scripted actors over ScriptedDesk.
//!
//! The policy samples uniformly among planner-useful actions and injects
//! errors from an [`ErrorInjectionProfile`]. After an unnoticed error it
//! perseverates: it keeps planning against the state it believes it is in
//! (the state the intended action would have produced) until it either
//! notices the mistake, with per-step probability `recovery_competence`, or
//! terminates believing it is done.

use std::sync::{Arc, OnceLock};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use regex::Regex;

use super::types::{
    AgentStep, ErrorInjectionProfile, ErrorType, HistoryStep, StepContext, StepKind, StepLabel,
};
use super::{OracleError, Policy, RecoveryActor};
use crate::env::{apply, Action, DeskPlanner, DeskState, ScrollDirection, TermStatus};

const UNBOUND_HOTKEYS: &[&[&str]] = &[&["ctrl", "shift", "s"], &["alt", "s"], &["ctrl", "enter"]];

/// Human-readable rendering of an action, used in thoughts and guidance.
pub fn describe(planner: &DeskPlanner, action: &Action) -> String {
    match action {
        Action::Click(id) => match planner.app().widget(id) {
            Some(w) => format!("click \"{}\"", w.label),
            None => format!("click {id}"),
        },
        Action::Type(text) => format!("type \"{text}\""),
        Action::Hotkey(keys) => format!("press {}", keys.join("+")),
        Action::Scroll(ScrollDirection::Down, n) => format!("scroll down {n}"),
        Action::Scroll(ScrollDirection::Up, n) => format!("scroll up {n}"),
        Action::Terminate(TermStatus::Success) => "finish the task".to_string(),
        Action::Terminate(TermStatus::Failure) => "give up".to_string(),
    }
}

/// What the agent thinks is going on, reconstructed from its own history.
struct Belief {
    state: DeskState,
    /// 1-based index of the step that caused the confusion.
    error_step: usize,
    error_action: Action,
}

#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    id: String,
    planner: Arc<DeskPlanner>,
    profile: ErrorInjectionProfile,
}

impl ScriptedPolicy {
    pub fn new(id: impl Into<String>, planner: Arc<DeskPlanner>, profile: ErrorInjectionProfile) -> Self {
        ScriptedPolicy {
            id: id.into(),
            planner,
            profile,
        }
    }

    pub fn planner(&self) -> &Arc<DeskPlanner> {
        &self.planner
    }

    pub fn profile(&self) -> &ErrorInjectionProfile {
        &self.profile
    }

    fn belief(&self, history: &[HistoryStep]) -> Option<Belief> {
        let app = self.planner.app();
        let mut belief: Option<Belief> = None;
        for (j, h) in history.iter().enumerate() {
            let Some(label) = &h.label else {
                if let Some(b) = belief.as_mut() {
                    b.state = apply(app, &b.state, &h.action);
                }
                continue;
            };
            match &label.kind {
                StepKind::Injected { error } if *error == ErrorType::FailToTerminate => {}
                StepKind::Injected { .. } => {
                    let base = belief
                        .as_ref()
                        .map_or(&h.observation.state, |b| &b.state)
                        .clone();
                    let intended = label.intended.as_ref().unwrap_or(&h.action);
                    let (error_step, error_action) = match &belief {
                        Some(b) => (b.error_step, b.error_action.clone()),
                        None => (j + 1, h.action.clone()),
                    };
                    belief = Some(Belief {
                        state: apply(app, &base, intended),
                        error_step,
                        error_action,
                    });
                }
                StepKind::Perseverate => {
                    if let Some(b) = belief.as_mut() {
                        b.state = apply(app, &b.state, &h.action);
                    }
                }
                StepKind::OnPlan | StepKind::Recovery | StepKind::Guided => belief = None,
            }
        }
        belief
    }

    fn plan_step(&self, state: &DeskState, rng: &mut dyn RngCore) -> Action {
        let useful = self.planner.useful_actions(state);
        useful
            .choose(rng)
            .cloned()
            .unwrap_or(Action::Terminate(TermStatus::Failure))
    }

    fn thought_for(&self, state: &DeskState, next: &Action) -> String {
        let met = self.planner.milestones_met(state);
        let total = self.planner.milestone_count();
        match next {
            Action::Terminate(TermStatus::Success) => {
                format!("All {total} milestones look complete, so the task is done.")
            }
            Action::Terminate(TermStatus::Failure) => {
                "I cannot find a way to finish the task from here.".to_string()
            }
            a => format!(
                "{met} of {total} milestones done. Next I {}.",
                describe(&self.planner, a)
            ),
        }
    }

    /// Picks an erroneous action of the given type from `state`. Returns
    /// `(actual, intended)`, or `None` when the type does not apply here.
    /// Injected actions are never useful and never terminate.
    pub fn inject(
        &self,
        error: ErrorType,
        state: &DeskState,
        rng: &mut dyn RngCore,
    ) -> Option<(Action, Action)> {
        let p = &self.planner;
        let app = p.app();
        if !state.is_running() {
            return None;
        }
        let at_goal = p.goal_holds(state);
        if at_goal != (error == ErrorType::FailToTerminate) {
            return None;
        }
        let useful = p.useful_actions(state);
        if useful.is_empty() {
            return None;
        }
        let bad = |a: &Action| !a.is_terminate() && !p.is_useful(state, a);
        let enabled = |id: &str| app.widget(id).is_some_and(|w| app.is_enabled(w, state));
        let pick = |cands: Vec<(Action, Action)>, rng: &mut dyn RngCore| {
            cands.choose(rng).cloned()
        };
        let any_intended = |rng: &mut dyn RngCore| useful.choose(rng).cloned().expect("non-empty");

        match error {
            ErrorType::IncorrectUiElement => {
                let intended = any_intended(rng);
                let c = app
                    .widgets
                    .iter()
                    .filter(|w| enabled(&w.id))
                    .map(|w| Action::Click(w.id.clone()))
                    .filter(|a| bad(a) && *a != intended)
                    .map(|a| (a, intended.clone()))
                    .collect();
                pick(c, rng)
            }
            ErrorType::GroundingFailure => {
                let intended = any_intended(rng);
                let base = match &intended {
                    Action::Click(id) => id.clone(),
                    _ => app.widgets.choose(rng)?.id.clone(),
                };
                Some((Action::Click(format!("{base}_area")), intended))
            }
            ErrorType::IneffectiveAction => {
                let intended = any_intended(rng);
                let c = app
                    .widgets
                    .iter()
                    .filter(|w| !enabled(&w.id))
                    .map(|w| (Action::Click(w.id.clone()), intended.clone()))
                    .collect();
                pick(c, rng)
            }
            ErrorType::TypingError => {
                let typed: Vec<_> = useful.iter().filter(|a| matches!(a, Action::Type(_))).collect();
                let intended = (*typed.choose(rng)?).clone();
                let Action::Type(text) = &intended else { unreachable!() };
                let mut chars: Vec<char> = text.chars().collect();
                if chars.len() >= 2 {
                    let i = rng.gen_range(0..chars.len());
                    chars.remove(i);
                } else {
                    chars.push('x');
                }
                let a = Action::Type(chars.into_iter().collect());
                bad(&a).then_some((a, intended))
            }
            ErrorType::MissNecessaryStep => {
                let intended = any_intended(rng);
                let skipped = apply(app, state, &intended);
                let c = p
                    .useful_actions(&skipped)
                    .into_iter()
                    .filter(|a| bad(a))
                    .map(|a| (a, intended.clone()))
                    .collect();
                pick(c, rng)
            }
            ErrorType::IncorrectToolUsage => {
                let intended = any_intended(rng);
                let mut c: Vec<Action> = app.hotkeys.iter().map(|h| Action::Hotkey(h.keys.clone())).collect();
                for k in 1..=app.max_scroll.max(1) {
                    c.push(Action::Scroll(ScrollDirection::Down, k));
                    c.push(Action::Scroll(ScrollDirection::Up, k));
                }
                let c = c.into_iter().filter(|a| bad(a)).map(|a| (a, intended.clone())).collect();
                pick(c, rng)
            }
            ErrorType::WrongTarget => {
                let clicks: Vec<_> = useful.iter().filter(|a| matches!(a, Action::Click(_))).collect();
                let intended = (*clicks.choose(rng)?).clone();
                let Action::Click(id) = &intended else { unreachable!() };
                let kind = app.widget(id)?.kind;
                let c = app
                    .widgets
                    .iter()
                    .filter(|w| w.kind == kind && &w.id != id)
                    .map(|w| Action::Click(w.id.clone()))
                    .filter(|a| bad(a))
                    .map(|a| (a, intended.clone()))
                    .collect();
                pick(c, rng)
            }
            ErrorType::IncorrectParameter => {
                let params: Vec<_> = useful
                    .iter()
                    .filter(|a| matches!(a, Action::Type(_) | Action::Scroll(..)))
                    .collect();
                let intended = (*params.choose(rng)?).clone();
                let c: Vec<Action> = match &intended {
                    Action::Type(t) => p
                        .text_values()
                        .into_iter()
                        .filter(|v| v != t)
                        .map(Action::Type)
                        .collect(),
                    Action::Scroll(d, n) => (1..=app.max_scroll.max(1))
                        .filter(|m| m != n)
                        .map(|m| Action::Scroll(*d, m))
                        .collect(),
                    _ => Vec::new(),
                };
                let c = c.into_iter().filter(|a| bad(a)).map(|a| (a, intended.clone())).collect();
                pick(c, rng)
            }
            ErrorType::MisunderstandObjective => {
                let intended = any_intended(rng);
                let c = p
                    .known_actions(state)
                    .into_iter()
                    .filter(|a| bad(a) && apply(app, state, a) != *state)
                    .map(|a| (a, intended.clone()))
                    .collect();
                pick(c, rng)
            }
            ErrorType::FailToTerminate => {
                let intended = Action::Terminate(TermStatus::Success);
                let c = p
                    .known_actions(state)
                    .into_iter()
                    .filter(|a| bad(a) && p.goal_holds(&apply(app, state, a)))
                    .map(|a| (a, intended.clone()))
                    .collect();
                pick(c, rng)
            }
            ErrorType::LackOfKnowledge => {
                let intended = any_intended(rng);
                let c = UNBOUND_HOTKEYS
                    .iter()
                    .map(|keys| Action::hotkey(keys.iter().copied()))
                    .filter(|a| bad(a) && apply(app, state, a) == *state)
                    .map(|a| (a, intended.clone()))
                    .collect();
                pick(c, rng)
            }
        }
    }

    fn choose_injection(
        &self,
        step_index: u32,
        state: &DeskState,
        rng: &mut dyn RngCore,
    ) -> Option<(ErrorType, Action, Action)> {
        if let Some(&forced) = self.profile.forced.get(&step_index) {
            if let Some((a, intended)) = self.inject(forced, state, rng) {
                return Some((forced, a, intended));
            }
        }
        for t in ErrorType::ALL {
            let rate = self.profile.rates.get(&t).copied().unwrap_or(0.0);
            if rate > 0.0 && rng.gen::<f64>() < rate {
                if let Some((a, intended)) = self.inject(t, state, rng) {
                    return Some((t, a, intended));
                }
            }
        }
        None
    }

    fn label(&self, state: &DeskState, kind: StepKind, intended: Option<Action>, action: &Action) -> StepLabel {
        StepLabel {
            kind,
            intended,
            correct: self.planner.is_useful(state, action),
        }
    }

    fn recovery_step(&self, state: &DeskState, belief: &Belief, rng: &mut dyn RngCore) -> AgentStep {
        let action = self.plan_step(state, rng);
        let thought = format!(
            "REFLECT: step {} `{}` did not have the intended effect | FIX: {} instead.",
            belief.error_step,
            belief.error_action,
            describe(&self.planner, &action)
        );
        AgentStep {
            label: Some(self.label(state, StepKind::Recovery, None, &action)),
            thought,
            action,
        }
    }

    fn act(&self, ctx: &StepContext<'_>, rng: &mut dyn RngCore) -> AgentStep {
        let state = &ctx.observation.state;
        if let Some(belief) = self.belief(ctx.history) {
            if self.profile.recovery_competence > 0.0 && rng.gen::<f64>() < self.profile.recovery_competence {
                return self.recovery_step(state, &belief, rng);
            }
            let action = if self.planner.goal_holds(&belief.state) {
                Action::Terminate(TermStatus::Success)
            } else {
                self.plan_step(&belief.state, rng)
            };
            return AgentStep {
                thought: self.thought_for(&belief.state, &action),
                label: Some(self.label(state, StepKind::Perseverate, None, &action)),
                action,
            };
        }
        let step_index = ctx.history.len() as u32 + 1;
        if let Some((error, action, intended)) = self.choose_injection(step_index, state, rng) {
            return AgentStep {
                thought: self.thought_for(state, &intended),
                label: Some(self.label(state, StepKind::Injected { error }, Some(intended), &action)),
                action,
            };
        }
        let action = self.plan_step(state, rng);
        AgentStep {
            thought: self.thought_for(state, &action),
            label: Some(self.label(state, StepKind::OnPlan, None, &action)),
            action,
        }
    }
}

impl Policy for ScriptedPolicy {
    fn id(&self) -> &str {
        &self.id
    }

    fn propose_action(
        &self,
        ctx: &StepContext<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<AgentStep, OracleError> {
        Ok(self.act(ctx, rng))
    }
}

fn guidance_patterns() -> &'static [Regex; 3] {
    static RE: OnceLock<[Regex; 3]> = OnceLock::new();
    RE.get_or_init(|| {
        [
            Regex::new(r"perform `([^`]+)`").expect("valid regex"),
            Regex::new(r"(?i)\bclick (?:widget |on )?`?([A-Za-z0-9_.\-]+)`?").expect("valid regex"),
            Regex::new(r"Instead of `([^`]+)`").expect("valid regex"),
        ]
    })
}

/// The action a guidance text asks for, if it names one.
pub fn guidance_action(guidance: &str) -> Option<Action> {
    let [perform, click, _] = guidance_patterns();
    if let Some(c) = perform.captures(guidance) {
        if let Ok(a) = Action::parse(&c[1]) {
            return Some(a);
        }
    }
    click
        .captures(guidance)
        .map(|c| Action::Click(c[1].to_string()))
}

/// Scripted guidance-following actor. Its first step follows the guidance
/// when the named action does something, and otherwise the planner; later
/// steps behave like a [`ScriptedPolicy`] with the recovery profile.
#[derive(Debug, Clone)]
pub struct ScriptedRecoveryActor {
    inner: ScriptedPolicy,
}

impl ScriptedRecoveryActor {
    pub fn new(planner: Arc<DeskPlanner>, profile: ErrorInjectionProfile) -> Self {
        ScriptedRecoveryActor {
            inner: ScriptedPolicy::new("scripted-recovery", planner, profile),
        }
    }

    fn legal(&self, state: &DeskState, action: &Action) -> bool {
        if action.is_terminate() {
            return true;
        }
        let app = self.inner.planner.app();
        apply(app, state, action) != *state
    }
}

impl RecoveryActor for ScriptedRecoveryActor {
    fn propose_recovery_action(
        &self,
        ctx: &StepContext<'_>,
        guidance: &str,
        rng: &mut dyn RngCore,
    ) -> Result<AgentStep, OracleError> {
        if guidance.trim().is_empty() {
            return Err(OracleError::ContractViolation("empty guidance".to_string()));
        }
        let state = &ctx.observation.state;
        let action = guidance_action(guidance)
            .filter(|a| self.legal(state, a))
            .unwrap_or_else(|| self.inner.plan_step(state, rng));
        let target = guidance_patterns()[2]
            .captures(guidance)
            .map(|c| format!("`{}` was a mistake", &c[1]))
            .unwrap_or_else(|| "the earlier approach went wrong".to_string());
        let thought = format!(
            "REFLECT: {target} | FIX: {} as advised.",
            describe(&self.inner.planner, &action)
        );
        Ok(AgentStep {
            label: Some(self.inner.label(state, StepKind::Guided, None, &action)),
            thought,
            action,
        })
    }

    fn continue_rollout(
        &self,
        ctx: &StepContext<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<AgentStep, OracleError> {
        Ok(self.inner.act(ctx, rng))
    }
}
