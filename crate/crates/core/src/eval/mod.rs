//! Robustness evaluation: depth-indexed test cases cut from failed
//! trajectories, replayed takeovers, and awareness/recovery scoring.

pub mod agents;
pub mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{
    replay_prefix, Action, DeskApp, DeskPlanner, EnvError, StateHash, TaskSpec, TermStatus, EVAL_MAX_STEPS,
};
use crate::expansion::{derive_seed, stable_hash};
use crate::oracles::{
    ActionCritic, ErrorType, HistoryStep, OracleError, Policy, ProgressCritic, ReflectionIdentifier, RewardModel,
    StepContext, StepKind, TrajectoryRecord,
};
use crate::tree::{NodeId, TrajectoryTree, TreeError};

pub use agents::{AgentFactory, AgentSpec, DecayAgent, FrozenAgent, OracleRecoveryAgent};
pub use report::{drop_percent, render_csv, render_summary};

pub const DEPTHS: [u32; 4] = [0, 1, 3, 5];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("case rejected: {0}")]
    CaseRejected(String),
    #[error("case invalid: {0}")]
    CaseInvalid(String),
    #[error("incomplete results: {0}")]
    Incomplete(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseSource {
    pub task_id: String,
    pub trajectory_id: u32,
}

/// One takeover scenario: replay `verified_prefix`, the root-cause action
/// and `depth` further actions, then hand control to the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub case_id: String,
    pub task: TaskSpec,
    pub verified_prefix: Vec<Action>,
    /// 0-based position of the erroneous action.
    pub root_cause_index: usize,
    pub root_cause_action: Action,
    pub error_types: Vec<ErrorType>,
    pub depth: u32,
    pub post_error_actions: Vec<Action>,
    /// Agent outputs for every replayed action, injected as history.
    pub outputs: Vec<String>,
    /// Observation hashes of the replay, initial state included.
    pub expected_hashes: Vec<StateHash>,
    pub replay_seed: u64,
    pub source: CaseSource,
}

impl TestCase {
    pub fn replay_actions(&self) -> Vec<Action> {
        let mut a = self.verified_prefix.clone();
        a.push(self.root_cause_action.clone());
        a.extend(self.post_error_actions.iter().cloned());
        a
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::CaseInvalid(format!("{}: {m}", self.case_id)));
        if !DEPTHS.contains(&self.depth) {
            return bad(format!("depth {} is not one of {DEPTHS:?}", self.depth));
        }
        if self.post_error_actions.len() != self.depth as usize {
            return bad("post-error action count differs from depth".into());
        }
        if self.root_cause_index != self.verified_prefix.len() {
            return bad("root cause must follow the prefix".into());
        }
        if self.error_types.is_empty() {
            return bad("no error type".into());
        }
        let n = self.replay_actions().len();
        if n > EVAL_MAX_STEPS as usize {
            return bad(format!("{n} replayed steps exceed the {EVAL_MAX_STEPS}-step budget"));
        }
        if self.outputs.len() != n || self.expected_hashes.len() != n + 1 {
            return bad("outputs or hashes do not match the replayed actions".into());
        }
        Ok(())
    }
}

/// Why a requested depth produced no case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub task_id: String,
    pub trajectory_id: u32,
    pub depth: u32,
    pub reason: String,
}

/// Critics used to certify the error-free prefix.
pub struct CaseCritics<'a> {
    pub progress: &'a dyn ProgressCritic,
    pub action: &'a dyn ActionCritic,
}

/// Cuts one case per feasible depth out of a failed trajectory. The first
/// incorrect step in the injection log is the root cause; it must be an
/// injected, non-terminating action, and every earlier step must pass both
/// critics.
pub fn build_test_cases(
    task: &TaskSpec,
    app: &Arc<DeskApp>,
    planner: &DeskPlanner,
    record: &TrajectoryRecord,
    source: CaseSource,
    depths: &[u32],
    critics: &CaseCritics<'_>,
) -> Result<(Vec<TestCase>, Vec<SkipRecord>), EvalError> {
    let reject = |m: &str| EvalError::CaseRejected(format!("{}/{}: {m}", source.task_id, source.trajectory_id));
    let labels = record.labels();
    let Some(rc) = labels.iter().position(|l| l.as_ref().is_none_or(|l| !l.correct)) else {
        return Err(reject("no incorrect step in the injection log"));
    };
    let error = labels[rc]
        .as_ref()
        .and_then(|l| l.injected_error())
        .ok_or_else(|| reject("root cause is not an injected error"))?;
    let steps = &record.steps;
    if steps[rc].action.is_terminate() {
        return Err(reject("root cause ends the episode"));
    }
    for (i, s) in steps[..rc].iter().enumerate() {
        let pv = critics
            .progress
            .assess_progress(&task.instruction, &s.observation, &s.action, &steps[..i])?;
        let av = critics.action.verify_action(&s.observation, &s.action, record.observation(i + 1))?;
        if pv.c != 1 || av != 1 {
            return Err(reject(&format!("prefix step {} fails critic verification", i + 1)));
        }
    }
    let mut eval_task = task.clone();
    eval_task.max_steps = EVAL_MAX_STEPS;
    let eval_task = Arc::new(eval_task);
    let mut cases = Vec::new();
    let mut skips = Vec::new();
    for &d in depths {
        let skip = |reason: String| SkipRecord {
            task_id: source.task_id.clone(),
            trajectory_id: source.trajectory_id,
            depth: d,
            reason,
        };
        let end = rc + 1 + d as usize;
        if end > steps.len() {
            log::info!("{}/{}: depth {d} exceeds the trajectory", source.task_id, source.trajectory_id);
            skips.push(skip("depth exceeds trajectory".into()));
            continue;
        }
        let post = &steps[rc + 1..end];
        if post.iter().any(|s| {
            s.action.is_terminate()
                || s.label
                    .as_ref()
                    .is_some_and(|l| matches!(l.kind, StepKind::Recovery | StepKind::Guided))
        }) {
            skips.push(skip("post-error steps include a recovery or a termination".into()));
            continue;
        }
        let takeover = &record.observation(end).state;
        match planner.distance(takeover) {
            Some(dist) if end + dist as usize + 1 <= EVAL_MAX_STEPS as usize => {}
            Some(_) => {
                skips.push(skip("too few steps left to recover".into()));
                continue;
            }
            None => {
                skips.push(skip("goal unreachable after the error".into()));
                continue;
            }
        }
        let actions: Vec<Action> = steps[..end].iter().map(|s| s.action.clone()).collect();
        let (_, observations) = replay_prefix(&eval_task, app, &actions, None, task.seed)?;
        let expected_hashes: Vec<StateHash> = observations.iter().map(|o| o.state_hash).collect();
        let recorded: Vec<StateHash> = (0..=end).map(|i| record.observation(i).state_hash).collect();
        if expected_hashes != recorded {
            skips.push(skip("verification replay does not reproduce the trajectory".into()));
            continue;
        }
        cases.push(TestCase {
            case_id: format!("{}-t{}-d{d}", source.task_id, source.trajectory_id),
            task: (*eval_task).clone(),
            verified_prefix: actions[..rc].to_vec(),
            root_cause_index: rc,
            root_cause_action: actions[rc].clone(),
            error_types: vec![error],
            depth: d,
            post_error_actions: actions[rc + 1..].to_vec(),
            outputs: steps[..end].iter().map(|s| s.output.clone()).collect(),
            expected_hashes,
            replay_seed: task.seed,
            source: source.clone(),
        });
    }
    Ok((cases, skips))
}

/// Cases from every failed trajectory of a tree, deduplicated by replayed
/// action sequence. Rejected trajectories are reported as skips.
pub fn cases_from_tree(
    tree: &TrajectoryTree,
    task: &TaskSpec,
    app: &Arc<DeskApp>,
    planner: &DeskPlanner,
    depths: &[u32],
    critics: &CaseCritics<'_>,
) -> Result<(Vec<TestCase>, Vec<SkipRecord>), EvalError> {
    let mut failed: Vec<NodeId> = tree
        .verdicts()
        .iter()
        .filter(|(_, v)| !v.success())
        .map(|(l, _)| *l)
        .collect();
    failed.sort();
    let mut seen: BTreeSet<Vec<String>> = BTreeSet::new();
    let mut cases = Vec::new();
    let mut skips = Vec::new();
    for leaf in failed {
        let record = tree.record(leaf)?;
        let source = CaseSource {
            task_id: task.task_id.clone(),
            trajectory_id: leaf.0,
        };
        match build_test_cases(task, app, planner, &record, source, depths, critics) {
            Ok((cs, sk)) => {
                skips.extend(sk);
                for c in cs {
                    let key = c.replay_actions().iter().map(Action::canonical_form).collect();
                    if seen.insert(key) {
                        cases.push(c);
                    }
                }
            }
            Err(EvalError::CaseRejected(reason)) => {
                log::info!("{reason}");
                skips.push(SkipRecord {
                    task_id: task.task_id.clone(),
                    trajectory_id: leaf.0,
                    depth: u32::MAX,
                    reason,
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok((cases, skips))
}

/// Judges used to score a takeover.
pub struct CaseJudges<'a> {
    pub reward: &'a dyn RewardModel,
    pub reflection: &'a dyn ReflectionIdentifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub aware: u8,
    pub success: u8,
    pub steps_used: u32,
}

/// Replays the case, hands over to the agent and scores the episode.
/// Awareness reads only the agent's first output; success needs the agent
/// to finish with `TERMINATE(success)` and the reward judge to agree.
pub fn run_case(
    agent: &dyn Policy,
    case: &TestCase,
    app: &Arc<DeskApp>,
    judges: &CaseJudges<'_>,
    step_budget: u32,
    seed: u64,
) -> Result<CaseOutcome, EvalError> {
    case.validate()?;
    let mut task = case.task.clone();
    task.max_steps = step_budget.min(EVAL_MAX_STEPS);
    let task = Arc::new(task);
    let actions = case.replay_actions();
    if actions.len() >= task.max_steps as usize {
        return Err(EvalError::CaseInvalid(format!("{}: no steps left after replay", case.case_id)));
    }
    let (mut handle, observations) = replay_prefix(&task, app, &actions, Some(&case.expected_hashes), case.replay_seed)?;
    if handle.diverged() || observations.len() != case.expected_hashes.len() {
        return Err(EvalError::CaseInvalid(format!("{}: replay does not match expected hashes", case.case_id)));
    }
    let mut history: Vec<HistoryStep> = actions
        .iter()
        .zip(&case.outputs)
        .enumerate()
        .map(|(i, (a, o))| HistoryStep {
            observation: Arc::new(observations[i].clone()),
            output: o.clone(),
            action: a.clone(),
            label: None,
        })
        .collect();
    let mut obs = Arc::new(observations.last().expect("initial observation").clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut aware = None;
    let mut last = None;
    while !handle.is_terminated() && handle.remaining_steps() > 0 {
        let ctx = StepContext {
            instruction: &task.instruction,
            observation: &obs,
            history: &history,
        };
        let step = agent.propose_action(&ctx, &mut rng)?;
        let output = step.output();
        if aware.is_none() {
            aware = Some(judges.reflection.detect_reflection(&task.instruction, &history, &output)?);
        }
        let next = Arc::new(handle.step(&step.action)?);
        history.push(HistoryStep {
            observation: obs,
            output,
            action: step.action.clone(),
            label: None,
        });
        last = Some(step.action);
        obs = next;
    }
    let finished = matches!(last, Some(Action::Terminate(TermStatus::Success)));
    let success = if finished {
        let record = TrajectoryRecord {
            steps: history,
            final_observation: obs,
        };
        judges.reward.judge_trajectory(&task.instruction, &record)?.r_tau
    } else {
        0
    };
    Ok(CaseOutcome {
        aware: aware.unwrap_or(0),
        success,
        steps_used: handle.steps(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunResult {
    pub agent: String,
    pub case_id: String,
    pub task_id: String,
    pub depth: u32,
    pub error_types: Vec<ErrorType>,
    pub run: u32,
    pub aware: u8,
    pub success: u8,
    pub steps_used: u32,
}

/// Seed for one run of one case.
pub fn run_seed(seed: u64, case_id: &str, run: u32) -> u64 {
    derive_seed(seed, &[stable_hash(case_id), run as u64])
}

/// Per-task context an evaluation run needs.
pub struct TaskContext {
    pub app: Arc<DeskApp>,
    pub planner: Arc<DeskPlanner>,
    pub reward: Arc<dyn RewardModel>,
    pub reflection: Arc<dyn ReflectionIdentifier>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub results: Vec<RunResult>,
    /// Cases whose replay failed, with the reason; never scored.
    pub invalid: Vec<(String, String)>,
}

/// Runs every case `runs` times. Results come back in (case, run) order
/// regardless of scheduling.
pub fn run_suite(
    cases: &[TestCase],
    contexts: &BTreeMap<String, TaskContext>,
    agents: &AgentFactory,
    runs: u32,
    seed: u64,
) -> Result<SuiteOutcome, EvalError> {
    let agent_name = agents.spec().name();
    let jobs: Vec<(usize, u32)> = (0..cases.len()).flat_map(|c| (0..runs).map(move |r| (c, r))).collect();
    let outcomes: Vec<Result<CaseOutcome, EvalError>> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let case = &cases[c];
            let ctx = contexts
                .get(&case.task.task_id)
                .ok_or_else(|| EvalError::CaseInvalid(format!("{}: unknown task {}", case.case_id, case.task.task_id)))?;
            let agent = agents.build(&ctx.planner);
            let judges = CaseJudges {
                reward: &*ctx.reward,
                reflection: &*ctx.reflection,
            };
            run_case(&*agent, case, &ctx.app, &judges, EVAL_MAX_STEPS, run_seed(seed, &case.case_id, r))
        })
        .collect();
    let mut out = SuiteOutcome::default();
    let mut invalid: BTreeSet<usize> = BTreeSet::new();
    for (&(c, r), o) in jobs.iter().zip(outcomes) {
        let case = &cases[c];
        match o {
            Ok(o) => out.results.push(RunResult {
                agent: agent_name.clone(),
                case_id: case.case_id.clone(),
                task_id: case.task.task_id.clone(),
                depth: case.depth,
                error_types: case.error_types.clone(),
                run: r,
                aware: o.aware,
                success: o.success,
                steps_used: o.steps_used,
            }),
            Err(EvalError::CaseInvalid(m)) => {
                if invalid.insert(c) {
                    out.invalid.push((case.case_id.clone(), m));
                }
            }
            Err(e) => return Err(e),
        }
    }
    out.results.retain(|r| !out.invalid.iter().any(|(id, _)| id == &r.case_id));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub agent: String,
    pub depth: u32,
    /// `None` aggregates over every type.
    pub error_type: Option<ErrorType>,
    pub cases: usize,
    pub runs: usize,
    pub awareness_rate: f64,
    pub success_rate: f64,
    pub all_pass_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseAllPass {
    pub agent: String,
    pub case_id: String,
    pub task_id: String,
    pub depth: u32,
    pub all_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthDrop {
    pub agent: String,
    pub depth0: f64,
    pub depth5: f64,
    /// Relative drop in percent; `None` when the depth-0 rate is zero.
    pub drop_pct: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub runs_per_case: u32,
    pub rows: Vec<RateRow>,
    pub all_pass: Vec<CaseAllPass>,
    pub drops: Vec<DepthDrop>,
}

impl EvalReport {
    pub fn row(&self, agent: &str, depth: u32, error_type: Option<ErrorType>) -> Option<&RateRow> {
        self.rows
            .iter()
            .find(|r| r.agent == agent && r.depth == depth && r.error_type == error_type)
    }
}

#[derive(Default)]
struct Acc {
    cases: usize,
    runs: usize,
    aware: usize,
    success: usize,
    all_pass: usize,
}

impl Acc {
    fn row(&self, agent: &str, depth: u32, error_type: Option<ErrorType>) -> RateRow {
        let rate = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        RateRow {
            agent: agent.to_string(),
            depth,
            error_type,
            cases: self.cases,
            runs: self.runs,
            awareness_rate: rate(self.aware, self.runs),
            success_rate: rate(self.success, self.runs),
            all_pass_rate: rate(self.all_pass, self.cases),
        }
    }
}

/// Averages per (agent, depth, error type) and per (agent, depth); every
/// case must have exactly runs `0..runs_per_case`.
pub fn aggregate(results: &[RunResult], runs_per_case: u32) -> Result<EvalReport, EvalError> {
    let mut by_case: BTreeMap<(&str, &str), Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        by_case.entry((&r.agent, &r.case_id)).or_default().push(r);
    }
    let mut acc: BTreeMap<(String, u32, Option<ErrorType>), Acc> = BTreeMap::new();
    let mut all_pass = Vec::new();
    for ((agent, case_id), rs) in &by_case {
        let got: BTreeSet<u32> = rs.iter().map(|r| r.run).collect();
        if rs.len() != runs_per_case as usize || got != (0..runs_per_case).collect() {
            return Err(EvalError::Incomplete(format!(
                "{agent}/{case_id}: {} of {runs_per_case} runs",
                got.len()
            )));
        }
        let first = rs[0];
        let pass = rs.iter().all(|r| r.success == 1);
        all_pass.push(CaseAllPass {
            agent: agent.to_string(),
            case_id: case_id.to_string(),
            task_id: first.task_id.clone(),
            depth: first.depth,
            all_pass: pass,
        });
        let types: BTreeSet<Option<ErrorType>> =
            std::iter::once(None).chain(first.error_types.iter().map(|t| Some(*t))).collect();
        for t in types {
            let a = acc.entry((agent.to_string(), first.depth, t)).or_default();
            a.cases += 1;
            a.runs += rs.len();
            a.aware += rs.iter().filter(|r| r.aware == 1).count();
            a.success += rs.iter().filter(|r| r.success == 1).count();
            a.all_pass += pass as usize;
        }
    }
    let rows: Vec<RateRow> = acc.iter().map(|((a, d, t), x)| x.row(a, *d, *t)).collect();
    let agents: BTreeSet<&str> = rows.iter().map(|r| r.agent.as_str()).collect();
    let mut drops = Vec::new();
    for agent in agents {
        let at = |d: u32| rows.iter().find(|r| r.agent == agent && r.depth == d && r.error_type.is_none());
        if let (Some(r0), Some(r5)) = (at(0), at(5)) {
            drops.push(DepthDrop {
                agent: agent.to_string(),
                depth0: r0.success_rate,
                depth5: r5.success_rate,
                drop_pct: drop_percent(r0.success_rate, r5.success_rate),
            });
        }
    }
    Ok(EvalReport {
        runs_per_case,
        rows,
        all_pass,
        drops,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(case: &str, depth: u32, run: u32, success: u8) -> RunResult {
        RunResult {
            agent: "a".into(),
            case_id: case.into(),
            task_id: "t".into(),
            depth,
            error_types: vec![ErrorType::WrongTarget],
            run,
            aware: success,
            success,
            steps_used: 5,
        }
    }

    #[test]
    fn all_success_gives_unit_rates() {
        let rs: Vec<_> = (0..3).flat_map(|r| [result("c0", 0, r, 1), result("c5", 5, r, 1)]).collect();
        let rep = aggregate(&rs, 3).unwrap();
        assert!(rep.rows.iter().all(|r| r.success_rate == 1.0 && r.awareness_rate == 1.0));
        assert_eq!(rep.drops[0].drop_pct, Some(0.0));
    }

    #[test]
    fn partial_success_is_not_all_pass() {
        let rs: Vec<_> = [1, 1, 0, 1].iter().enumerate().map(|(i, s)| result("c", 1, i as u32, *s)).collect();
        let rep = aggregate(&rs, 4).unwrap();
        let row = rep.row("a", 1, None).unwrap();
        assert_eq!(row.success_rate, 0.75);
        assert_eq!(row.all_pass_rate, 0.0);
        assert!(!rep.all_pass[0].all_pass);
    }

    fn synthesized_cases(index: usize) -> (Vec<TestCase>, BTreeMap<String, TaskContext>) {
        use crate::env::generate_task;
        use crate::expansion::{run_co_expansion, CoExpansionConfig};
        use crate::oracles::{ErrorInjectionProfile, OracleSet};
        let (app, task) = generate_task(index, 5);
        let app = Arc::new(app);
        let oracles = OracleSet::scripted(
            &task,
            Arc::clone(&app),
            ErrorInjectionProfile::uniform(0.03, 0.0),
            ErrorInjectionProfile::uniform(0.01, 0.5),
        );
        let config = CoExpansionConfig { rounds: 4, ..Default::default() };
        let run = run_co_expansion(&task, Arc::clone(&app), &config, &oracles).unwrap();
        let planner = Arc::new(DeskPlanner::new(&task, Arc::clone(&app)));
        let critics = CaseCritics { progress: &*oracles.progress, action: &*oracles.action };
        let (cases, _) = cases_from_tree(&run.tree, &task, &app, &planner, &DEPTHS, &critics).unwrap();
        let mut ctx = BTreeMap::new();
        ctx.insert(
            task.task_id.clone(),
            TaskContext { app, planner, reward: oracles.reward.clone(), reflection: oracles.reflection.clone() },
        );
        (cases, ctx)
    }

    #[test]
    fn bracket_agents_score_one_and_zero() {
        let (cases, ctx) = synthesized_cases(4);
        assert!(!cases.is_empty());
        for c in &cases {
            c.validate().unwrap();
        }
        let remote = crate::oracles::RemoteConfig::default();
        let oracle = run_suite(&cases, &ctx, &AgentFactory::new(AgentSpec::OracleRecovery, &remote), 2, 0).unwrap();
        assert!(oracle.invalid.is_empty());
        assert!(oracle.results.iter().all(|r| r.aware == 1 && r.success == 1 && r.steps_used <= 50));
        let frozen = run_suite(&cases, &ctx, &AgentFactory::new(AgentSpec::Frozen, &remote), 2, 0).unwrap();
        assert!(frozen.results.iter().all(|r| r.aware == 0 && r.success == 0));
    }

    #[test]
    fn tampered_case_is_invalid() {
        let (mut cases, ctx) = synthesized_cases(5);
        cases.truncate(1);
        cases[0].expected_hashes[1] = StateHash(1);
        let remote = crate::oracles::RemoteConfig::default();
        let out = run_suite(&cases, &ctx, &AgentFactory::new(AgentSpec::OracleRecovery, &remote), 1, 0).unwrap();
        assert!(out.results.is_empty());
        assert_eq!(out.invalid.len(), 1);
    }

    #[test]
    fn missing_runs_are_reported() {
        let rs = vec![result("c", 0, 0, 1), result("c", 0, 2, 1)];
        assert!(matches!(aggregate(&rs, 2), Err(EvalError::Incomplete(_))));
        assert!(matches!(aggregate(&rs[..1], 2), Err(EvalError::Incomplete(_))));
    }
}
