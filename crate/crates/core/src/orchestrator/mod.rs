//! Batch runs over a store: synthesis, dataset construction, case building,
//! robustness evaluation and reporting.

pub mod config;
pub mod store;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{EvalConfig, GenerateConfig, JudgeConfig, Mode, RunConfig};
pub use store::Store;

use crate::dataset::{build_dataset, write_dataset, DatasetError, DatasetManifest, TreeInput};
use crate::env::{generate_task, DeskApp, DeskPlanner, SnapshotRegistry, TaskSpec};
use crate::eval::report::{render_csv, render_summary};
use crate::eval::{
    aggregate, cases_from_tree, run_suite, AgentFactory, AgentSpec, CaseCritics, EvalError, RunResult, SkipRecord,
    TaskContext, TestCase,
};
use crate::expansion::{run_co_expansion, stable_hash, ExpansionStats};
use crate::oracles::{OracleSet, RemoteOracles};
use crate::tree::{read_tree, write_tree, TrajectoryTree};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("store I/O: {0}")]
    Io(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl OrchestratorError {
    /// Process exit code for a run that could not complete.
    pub fn exit_code(&self) -> i32 {
        match self {
            OrchestratorError::Eval(EvalError::Oracle(_)) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Done,
    Cached,
    Failed,
}

/// One line of `runs/<run_id>/manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ManifestEvent {
    Start {
        run_id: String,
        mode: Mode,
        config_hash: String,
        tasks: Vec<String>,
        params: serde_json::Value,
    },
    Task {
        task_id: String,
        status: TaskStatus,
        wall_ms: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detail: Option<String>,
    },
    Finish {
        ok: usize,
        failed: usize,
        wall_ms: u64,
    },
}

/// Completion marker written after a task's tree is safely on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task_id: String,
    pub policy_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub nodes: usize,
    pub trajectories: usize,
    pub successes: usize,
    pub stats: ExpansionStats,
}

impl TaskSummary {
    pub fn pass_at_m(&self) -> f64 {
        if self.successes > 0 {
            1.0
        } else {
            0.0
        }
    }

    pub fn average(&self) -> f64 {
        if self.trajectories == 0 {
            0.0
        } else {
            self.successes as f64 / self.trajectories as f64
        }
    }
}

/// One line of `trajectories/<task_id>.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLine {
    pub task_id: String,
    pub trajectory_id: u32,
    pub actions: Vec<String>,
    pub branch_kinds: Vec<String>,
    pub success: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunOutcome {
    pub run_id: String,
    pub ok: Vec<String>,
    pub failed: Vec<(String, String)>,
    pub report_dir: Option<std::path::PathBuf>,
}

impl RunOutcome {
    /// 0 when everything succeeded, 1 on partial failure.
    pub fn exit_code(&self) -> i32 {
        if self.failed.is_empty() {
            0
        } else {
            1
        }
    }
}

fn elapsed_ms(t: Instant) -> u64 {
    t.elapsed().as_millis() as u64
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

/// Shared run state: store, snapshot registry, judges and worker pool.
pub struct Orchestrator {
    config: RunConfig,
    store: Store,
    remote: Option<Arc<RemoteOracles>>,
    pool: rayon::ThreadPool,
    manifest_lock: Mutex<()>,
    planners: Mutex<HashMap<String, Arc<DeskPlanner>>>,
}

impl Orchestrator {
    pub fn new(config: RunConfig) -> Result<Self, OrchestratorError> {
        config.validate()?;
        let store = Store::new(config.store.clone());
        store.init()?;
        let remote = config
            .judge
            .endpoint
            .as_deref()
            .map(|e| Arc::new(RemoteOracles::new(config.judge.remote(e))));
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| OrchestratorError::Config(format!("worker pool: {e}")))?;
        Ok(Orchestrator {
            config,
            store,
            remote,
            pool,
            manifest_lock: Mutex::new(()),
            planners: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    fn log_event(&self, run_id: &str, event: &ManifestEvent) -> Result<(), OrchestratorError> {
        let _guard = self.manifest_lock.lock().unwrap_or_else(|e| e.into_inner());
        self.store.append_manifest(run_id, event)
    }

    /// The task's planner, built once per orchestrator.
    fn planner(&self, task: &TaskSpec, app: Arc<DeskApp>) -> Arc<DeskPlanner> {
        let cached = |p: &Self| p.planners.lock().unwrap_or_else(|e| e.into_inner()).get(&task.task_id).cloned();
        if let Some(p) = cached(self) {
            return p;
        }
        let built = Arc::new(DeskPlanner::new(task, app));
        let mut map = self.planners.lock().unwrap_or_else(|e| e.into_inner());
        Arc::clone(map.entry(task.task_id.clone()).or_insert(built))
    }

    fn oracles(&self, task: &TaskSpec, app: Arc<DeskApp>) -> OracleSet {
        let planner = self.planner(task, app);
        let set = OracleSet::scripted_with_planner(task, planner, self.config.policy.clone(), self.config.recovery.clone());
        match &self.remote {
            Some(r) => set.with_remote_judges(Arc::clone(r)),
            None => set,
        }
    }

    /// Tasks matching the configured glob together with their snapshots.
    /// A task naming an unknown snapshot is an integrity error.
    fn resolve_tasks(&self) -> Result<(Vec<TaskSpec>, SnapshotRegistry), OrchestratorError> {
        let tasks = self.store.load_tasks(&self.config.tasks)?;
        if tasks.is_empty() {
            return Err(OrchestratorError::Config(format!(
                "no task under {} matches `{}`",
                self.store.tasks_dir().display(),
                self.config.tasks
            )));
        }
        let registry = self.store.load_snapshots()?;
        for t in &tasks {
            registry
                .get(&t.snapshot_id)
                .map_err(|e| OrchestratorError::Integrity(format!("task {}: {e}", t.task_id)))?;
        }
        Ok((tasks, registry))
    }

    /// Writes `count` generated tasks and their snapshots into the store.
    pub fn generate_tasks(&self) -> Result<Vec<String>, OrchestratorError> {
        let g = &self.config.generate;
        let mut ids = Vec::new();
        for i in 0..g.count {
            let (app, mut task) = generate_task(i, g.seed);
            task.stochasticity = g.stochasticity;
            self.store.write_snapshot(&app)?;
            self.store.write_task(&task)?;
            ids.push(task.task_id);
        }
        Ok(ids)
    }

    pub fn task_seed(&self, task_id: &str) -> u64 {
        self.config.base_seed ^ stable_hash(task_id)
    }

    fn cached_summary(&self, task_id: &str, config_hash: &str) -> Option<TaskSummary> {
        let marker = self.store.marker_path(task_id);
        if !marker.exists() || !self.store.tree_path(task_id).exists() {
            return None;
        }
        let s: TaskSummary = self.store.read_json(&marker).ok()?;
        (s.config_hash == config_hash).then_some(s)
    }

    fn synthesize_task(&self, task: &TaskSpec, app: Arc<DeskApp>, config_hash: &str) -> Result<TaskSummary, String> {
        let oracles = self.oracles(task, Arc::clone(&app));
        let seed = self.task_seed(&task.task_id);
        let mut co = self.config.co_expansion.clone();
        co.base_seed = seed;
        let run = run_co_expansion(task, app, &co, &oracles).map_err(|e| e.to_string())?;
        let tree = &run.tree;
        let obs = self.store.observations();
        write_tree(tree, &self.store.tree_path(&task.task_id), &obs).map_err(|e| e.to_string())?;

        let mut rounds = Vec::new();
        for r in &run.rounds {
            rounds.extend(serde_json::to_vec(r).map_err(|e| e.to_string())?);
            rounds.push(b'\n');
        }
        self.store
            .write_bytes(&self.store.rounds_path(&task.task_id), &rounds)
            .map_err(|e| e.to_string())?;

        let mut lines = Vec::new();
        for t in tree.enumerate_trajectories() {
            let line = TrajectoryLine {
                task_id: task.task_id.clone(),
                trajectory_id: t.leaf.0,
                actions: t.edges.iter().map(|e| tree.edge(*e).action.canonical_form()).collect(),
                branch_kinds: t
                    .edges
                    .iter()
                    .map(|e| tree.edge(*e).branch_kind.as_str().to_string())
                    .collect(),
                success: tree.verdict(t.leaf).map(|v| v.success()),
            };
            lines.extend(serde_json::to_vec(&line).map_err(|e| e.to_string())?);
            lines.push(b'\n');
        }
        self.store
            .write_bytes(&self.store.trajectories_path(&task.task_id), &lines)
            .map_err(|e| e.to_string())?;

        let summary = TaskSummary {
            task_id: task.task_id.clone(),
            policy_id: oracles.policy.id().to_string(),
            config_hash: config_hash.to_string(),
            seed,
            nodes: tree.nodes().len(),
            trajectories: tree.verdicts().len(),
            successes: tree.verdicts().values().filter(|v| v.success()).count(),
            stats: run.stats,
        };
        self.store
            .write_json(&self.store.marker_path(&task.task_id), &summary)
            .map_err(|e| e.to_string())?;
        Ok(summary)
    }

    /// Grows one tree per task. Tasks whose marker matches the current
    /// configuration are reused.
    pub fn synthesize(&self, run_id: Option<&str>) -> Result<RunOutcome, OrchestratorError> {
        let started = Instant::now();
        let (tasks, registry) = self.resolve_tasks()?;
        let config_hash = self.config.synthesis_hash();
        let run_id = run_id.map_or_else(|| format!("synth-{config_hash}"), str::to_string);
        self.log_event(
            &run_id,
            &ManifestEvent::Start {
                run_id: run_id.clone(),
                mode: Mode::Synthesize,
                config_hash: config_hash.clone(),
                tasks: tasks.iter().map(|t| t.task_id.clone()).collect(),
                params: serde_json::to_value(&self.config).unwrap_or_default(),
            },
        )?;
        let results: Vec<(String, Result<TaskSummary, String>)> = self.pool.install(|| {
            tasks
                .par_iter()
                .map(|task| {
                    let t0 = Instant::now();
                    let (status, result) = match self.cached_summary(&task.task_id, &config_hash) {
                        Some(s) => (TaskStatus::Cached, Ok(s)),
                        None => {
                            let app = registry.get(&task.snapshot_id).expect("snapshot resolved");
                            let r = catch_unwind(AssertUnwindSafe(|| self.synthesize_task(task, app, &config_hash)))
                                .unwrap_or_else(|p| Err(format!("worker panicked: {}", panic_message(p))));
                            let status = if r.is_ok() { TaskStatus::Done } else { TaskStatus::Failed };
                            (status, r)
                        }
                    };
                    if let Err(e) = &result {
                        log::error!("task {}: {e}", task.task_id);
                    }
                    let event = ManifestEvent::Task {
                        task_id: task.task_id.clone(),
                        status,
                        wall_ms: elapsed_ms(t0),
                        detail: result.as_ref().err().cloned(),
                    };
                    if let Err(e) = self.log_event(&run_id, &event) {
                        log::error!("run manifest: {e}");
                    }
                    (task.task_id.clone(), result)
                })
                .collect()
        });
        let mut outcome = RunOutcome {
            run_id: run_id.clone(),
            ..Default::default()
        };
        let mut summaries = Vec::new();
        for (id, r) in results {
            match r {
                Ok(s) => {
                    outcome.ok.push(id);
                    summaries.push(s);
                }
                Err(e) => outcome.failed.push((id, e)),
            }
        }
        outcome.report_dir = Some(self.write_synthesis_report(&run_id, &summaries)?);
        self.log_event(
            &run_id,
            &ManifestEvent::Finish {
                ok: outcome.ok.len(),
                failed: outcome.failed.len(),
                wall_ms: elapsed_ms(started),
            },
        )?;
        Ok(outcome)
    }

    fn write_synthesis_report(
        &self,
        run_id: &str,
        summaries: &[TaskSummary],
    ) -> Result<std::path::PathBuf, OrchestratorError> {
        let dir = self.store.report_dir(run_id);
        self.store
            .write_bytes(&dir.join("pass_at_m.csv"), render_pass_at_m_csv(summaries).as_bytes())?;
        self.store
            .write_bytes(&dir.join("summary.md"), render_pass_at_m_summary(summaries).as_bytes())?;
        Ok(dir)
    }

    /// Synthesized tasks among those matching the glob, with their trees.
    fn load_trees(&self) -> Result<(Vec<(TaskSpec, Arc<DeskApp>, TrajectoryTree)>, Vec<(String, String)>), OrchestratorError> {
        let (tasks, registry) = self.resolve_tasks()?;
        let obs = self.store.observations();
        let mut out = Vec::new();
        let mut missing = Vec::new();
        for task in tasks {
            let path = self.store.tree_path(&task.task_id);
            if !self.store.marker_path(&task.task_id).exists() || !path.exists() {
                missing.push((task.task_id.clone(), "no synthesized tree".to_string()));
                continue;
            }
            let tree = read_tree(&path, &obs).map_err(|e| OrchestratorError::Integrity(format!("{}: {e}", path.display())))?;
            if tree.task_id() != task.task_id {
                return Err(OrchestratorError::Integrity(format!(
                    "{} holds the tree of `{}`",
                    path.display(),
                    tree.task_id()
                )));
            }
            let app = registry.get(&task.snapshot_id).expect("snapshot resolved");
            out.push((task, app, tree));
        }
        if out.is_empty() {
            return Err(OrchestratorError::Config("no synthesized trees; run `synthesize` first".into()));
        }
        Ok((out, missing))
    }

    /// Runs the training-data pipeline over every synthesized tree and
    /// writes `datasets/<name>/`.
    pub fn build_dataset(&self, name: &str) -> Result<(RunOutcome, DatasetManifest), OrchestratorError> {
        let started = Instant::now();
        let run_id = format!("dataset-{name}");
        let (trees, missing) = self.load_trees()?;
        self.log_event(
            &run_id,
            &ManifestEvent::Start {
                run_id: run_id.clone(),
                mode: Mode::Dataset,
                config_hash: self.config.synthesis_hash(),
                tasks: trees.iter().map(|(t, _, _)| t.task_id.clone()).collect(),
                params: serde_json::json!({ "name": name, "pipeline": self.config.pipeline }),
            },
        )?;
        let oracles: Vec<OracleSet> = self
            .pool
            .install(|| trees.par_iter().map(|(t, a, _)| self.oracles(t, Arc::clone(a))).collect());
        let policy_ids: Vec<String> = oracles.iter().map(|o| o.policy.id().to_string()).collect();
        let inputs: Vec<TreeInput<'_>> = trees
            .iter()
            .zip(&oracles)
            .zip(&policy_ids)
            .map(|(((task, _, tree), o), pid)| TreeInput {
                tree,
                instruction: &task.instruction,
                policy_id: pid,
                progress: &*o.progress,
                action: &*o.action,
            })
            .collect();
        let identifier = Arc::clone(&oracles[0].reflection);
        let build = self
            .pool
            .install(|| build_dataset(&inputs, &*identifier, &self.config.pipeline))?;
        let dir = self.store.dataset_dir(name);
        let manifest = write_dataset(&build, &dir)?;
        let report_dir = self.store.report_dir(&run_id);
        self.store
            .write_bytes(&report_dir.join("summary.md"), render_dataset_summary(name, &manifest).as_bytes())?;
        for (id, why) in &missing {
            self.log_event(
                &run_id,
                &ManifestEvent::Task {
                    task_id: id.clone(),
                    status: TaskStatus::Failed,
                    wall_ms: 0,
                    detail: Some(why.clone()),
                },
            )?;
        }
        let outcome = RunOutcome {
            run_id: run_id.clone(),
            ok: trees.iter().map(|(t, _, _)| t.task_id.clone()).collect(),
            failed: missing,
            report_dir: Some(report_dir),
        };
        self.log_event(
            &run_id,
            &ManifestEvent::Finish {
                ok: outcome.ok.len(),
                failed: outcome.failed.len(),
                wall_ms: elapsed_ms(started),
            },
        )?;
        Ok((outcome, manifest))
    }

    /// Cuts test cases out of every synthesized tree and writes
    /// `cases/<case_id>.json` plus `cases/index.json`.
    pub fn build_cases(&self) -> Result<CaseIndex, OrchestratorError> {
        let (trees, missing) = self.load_trees()?;
        let depths = self.config.eval.depths.clone();
        let per_task: Vec<Result<(Vec<TestCase>, Vec<SkipRecord>), String>> = self.pool.install(|| {
            trees
                .par_iter()
                .map(|(task, app, tree)| {
                    let oracles = self.oracles(task, Arc::clone(app));
                    let planner = self.planner(task, Arc::clone(app));
                    let critics = CaseCritics {
                        progress: &*oracles.progress,
                        action: &*oracles.action,
                    };
                    cases_from_tree(tree, task, app, &planner, &depths, &critics).map_err(|e| e.to_string())
                })
                .collect()
        });
        let mut index = CaseIndex::default();
        index.failed = missing;
        for ((task, _, _), r) in trees.iter().zip(per_task) {
            match r {
                Ok((cases, skips)) => {
                    for c in &cases {
                        self.store
                            .write_json(&self.store.cases_dir().join(format!("{}.json", c.case_id)), c)?;
                        index.cases.push(c.case_id.clone());
                    }
                    index.skips.extend(skips);
                }
                Err(e) => index.failed.push((task.task_id.clone(), e)),
            }
        }
        self.store.write_json(&self.store.cases_dir().join("index.json"), &index)?;
        Ok(index)
    }

    /// Cases listed in the case index whose task matches the glob.
    pub fn load_cases(&self) -> Result<Vec<TestCase>, OrchestratorError> {
        let path = self.store.cases_dir().join("index.json");
        if !path.exists() {
            return Ok(Vec::new());
        }
        let index: CaseIndex = self.store.read_json(&path)?;
        let pat = glob::Pattern::new(&self.config.tasks).map_err(|e| OrchestratorError::Config(e.to_string()))?;
        let mut cases = Vec::new();
        for id in &index.cases {
            let case: TestCase = self.store.read_json(&self.store.cases_dir().join(format!("{id}.json")))?;
            if case.case_id != *id {
                return Err(OrchestratorError::Integrity(format!("case file {id} holds `{}`", case.case_id)));
            }
            if pat.matches(&case.task.task_id) {
                cases.push(case);
            }
        }
        Ok(cases)
    }

    /// Runs `agent` on every case `runs` times and writes the CSV and
    /// markdown reports. Cases are built first when none exist.
    pub fn evaluate(&self, agent: &str, runs: Option<u32>, run_id: Option<&str>) -> Result<RunOutcome, OrchestratorError> {
        let started = Instant::now();
        let spec = AgentSpec::parse(agent).map_err(OrchestratorError::Config)?;
        let runs = runs.unwrap_or(self.config.eval.runs_per_case);
        if runs == 0 {
            return Err(OrchestratorError::Config("--runs must be positive".into()));
        }
        let mut cases = self.load_cases()?;
        if cases.is_empty() {
            self.build_cases()?;
            cases = self.load_cases()?;
        }
        if cases.is_empty() {
            return Err(OrchestratorError::Config("no evaluation cases could be built".into()));
        }
        cases.retain(|c| self.config.eval.depths.contains(&c.depth));
        let key = serde_json::json!({
            "agent": spec.name(),
            "runs": runs,
            "seed": self.config.eval.seed,
            "cases": cases.iter().map(|c| c.case_id.as_str()).collect::<Vec<_>>(),
        });
        let hash = hex::encode(&stable_hash(&key.to_string()).to_le_bytes()[..6]);
        let slug: String = spec
            .name()
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
            .collect();
        let run_id = run_id.map_or_else(|| format!("eval-{slug}-{hash}"), str::to_string);
        let mut task_ids: Vec<String> = cases.iter().map(|c| c.task.task_id.clone()).collect();
        task_ids.dedup();
        self.log_event(
            &run_id,
            &ManifestEvent::Start {
                run_id: run_id.clone(),
                mode: Mode::Evaluate,
                config_hash: hash,
                tasks: task_ids,
                params: serde_json::json!({ "agent": spec, "runs": runs, "seed": self.config.eval.seed }),
            },
        )?;
        let registry = self.store.load_snapshots()?;
        let mut contexts = BTreeMap::new();
        for c in &cases {
            if contexts.contains_key(&c.task.task_id) {
                continue;
            }
            let app = registry
                .get(&c.task.snapshot_id)
                .map_err(|e| OrchestratorError::Integrity(format!("case {}: {e}", c.case_id)))?;
            let oracles = self.oracles(&c.task, Arc::clone(&app));
            let planner = self.planner(&c.task, Arc::clone(&app));
            contexts.insert(
                c.task.task_id.clone(),
                TaskContext {
                    app,
                    planner,
                    reward: oracles.reward,
                    reflection: oracles.reflection,
                },
            );
        }
        let remote_template = self.config.judge.remote("");
        let factory = AgentFactory::new(spec, &remote_template);
        let suite = self
            .pool
            .install(|| run_suite(&cases, &contexts, &factory, runs, self.config.eval.seed))?;
        let mut results_bytes = Vec::new();
        for r in &suite.results {
            results_bytes.extend(serde_json::to_vec(r).map_err(|e| OrchestratorError::Integrity(e.to_string()))?);
            results_bytes.push(b'\n');
        }
        self.store
            .write_bytes(&self.store.run_dir(&run_id).join("results.jsonl"), &results_bytes)?;
        let report_dir = self.write_eval_report(&run_id, &suite.results, runs)?;
        for (case_id, why) in &suite.invalid {
            log::error!("case {case_id} invalid: {why}");
            self.log_event(
                &run_id,
                &ManifestEvent::Task {
                    task_id: case_id.clone(),
                    status: TaskStatus::Failed,
                    wall_ms: 0,
                    detail: Some(why.clone()),
                },
            )?;
        }
        let outcome = RunOutcome {
            run_id: run_id.clone(),
            ok: cases
                .iter()
                .filter(|c| !suite.invalid.iter().any(|(id, _)| *id == c.case_id))
                .map(|c| c.case_id.clone())
                .collect(),
            failed: suite.invalid,
            report_dir: Some(report_dir),
        };
        self.log_event(
            &run_id,
            &ManifestEvent::Finish {
                ok: outcome.ok.len(),
                failed: outcome.failed.len(),
                wall_ms: elapsed_ms(started),
            },
        )?;
        Ok(outcome)
    }

    fn write_eval_report(
        &self,
        run_id: &str,
        results: &[RunResult],
        runs: u32,
    ) -> Result<std::path::PathBuf, OrchestratorError> {
        let report = aggregate(results, runs)?;
        let dir = self.store.report_dir(run_id);
        self.store.write_bytes(&dir.join("eval.csv"), render_csv(&report).as_bytes())?;
        self.store
            .write_bytes(&dir.join("summary.md"), render_summary(&report).as_bytes())?;
        self.store.write_json(&dir.join("report.json"), &report)?;
        Ok(dir)
    }

    /// Regenerates the reports of a finished run and returns its markdown
    /// summary.
    pub fn report(&self, run_id: &str) -> Result<String, OrchestratorError> {
        let events = self.store.read_manifest(run_id)?;
        let start: ManifestEvent = events
            .first()
            .cloned()
            .and_then(|v| serde_json::from_value(v).ok())
            .ok_or_else(|| OrchestratorError::Integrity(format!("run `{run_id}` has no start event")))?;
        let ManifestEvent::Start { mode, tasks, params, .. } = start else {
            return Err(OrchestratorError::Integrity(format!("run `{run_id}` has no start event")));
        };
        let dir = self.store.report_dir(run_id);
        match mode {
            Mode::Synthesize => {
                let mut summaries = Vec::new();
                for t in &tasks {
                    let marker = self.store.marker_path(t);
                    if marker.exists() {
                        summaries.push(self.store.read_json::<TaskSummary>(&marker)?);
                    }
                }
                self.write_synthesis_report(run_id, &summaries)?;
            }
            Mode::Evaluate => {
                let path = self.store.run_dir(run_id).join("results.jsonl");
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| OrchestratorError::Io(format!("{}: {e}", path.display())))?;
                let results: Vec<RunResult> = text
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(|l| serde_json::from_str(l))
                    .collect::<Result<_, _>>()
                    .map_err(|e| OrchestratorError::Integrity(format!("{}: {e}", path.display())))?;
                let runs = params
                    .get("runs")
                    .and_then(|r| r.as_u64())
                    .ok_or_else(|| OrchestratorError::Integrity(format!("run `{run_id}` does not record its run count")))?;
                self.write_eval_report(run_id, &results, runs as u32)?;
            }
            Mode::Dataset => {
                let name = params
                    .get("name")
                    .and_then(|n| n.as_str())
                    .ok_or_else(|| OrchestratorError::Integrity(format!("run `{run_id}` does not name its dataset")))?;
                let manifest: DatasetManifest = self.store.read_json(&self.store.dataset_dir(name).join("manifest.json"))?;
                self.store
                    .write_bytes(&dir.join("summary.md"), render_dataset_summary(name, &manifest).as_bytes())?;
            }
            Mode::Report => {
                return Err(OrchestratorError::Integrity(format!("run `{run_id}` has no report")));
            }
        }
        let summary = dir.join("summary.md");
        std::fs::read_to_string(&summary).map_err(|e| OrchestratorError::Io(format!("{}: {e}", summary.display())))
    }
}

/// Contents of `cases/index.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseIndex {
    pub cases: Vec<String>,
    pub skips: Vec<SkipRecord>,
    #[serde(default)]
    pub failed: Vec<(String, String)>,
}

pub const PASS_AT_M_HEADER: &str = "task_id,policy_id,trajectories,successes,pass_at_m,average";

pub fn render_pass_at_m_csv(summaries: &[TaskSummary]) -> String {
    let mut rows: Vec<&TaskSummary> = summaries.iter().collect();
    rows.sort_by(|a, b| (&a.task_id, &a.policy_id).cmp(&(&b.task_id, &b.policy_id)));
    let mut out = format!("{PASS_AT_M_HEADER}\n");
    for s in rows {
        writeln!(
            out,
            "{},{},{},{},{:.4},{:.4}",
            s.task_id,
            s.policy_id,
            s.trajectories,
            s.successes,
            s.pass_at_m(),
            s.average()
        )
        .expect("string write");
    }
    out
}

pub fn render_pass_at_m_summary(summaries: &[TaskSummary]) -> String {
    let mut by_policy: BTreeMap<&str, Vec<&TaskSummary>> = BTreeMap::new();
    for s in summaries {
        by_policy.entry(&s.policy_id).or_default().push(s);
    }
    let mut out = String::from("# Synthesis\n\n| Policy | Tasks | Trajectories | Pass@M (%) | Average (%) |\n|---|---:|---:|---:|---:|\n");
    for (policy, rows) in by_policy {
        let n = rows.len() as f64;
        let traj: usize = rows.iter().map(|s| s.trajectories).sum();
        let pass = rows.iter().map(|s| s.pass_at_m()).sum::<f64>() / n * 100.0;
        let avg = rows.iter().map(|s| s.average()).sum::<f64>() / n * 100.0;
        writeln!(out, "| {policy} | {} | {traj} | {pass:.1} | {avg:.1} |", rows.len()).expect("string write");
    }
    out
}

pub fn render_dataset_summary(name: &str, m: &DatasetManifest) -> String {
    let s = &m.stages;
    let mut out = format!("# Dataset `{name}`\n\n| Stage | Count |\n|---|---:|\n");
    for (label, v) in [
        ("trajectories", s.trajectories),
        ("kept trajectories", s.kept_trajectories),
        ("steps", s.steps),
        ("kept steps", s.kept_steps),
        ("balanced", s.balanced),
        ("deduplicated", s.deduplicated),
        ("agnostic pool", s.agn),
        ("reflective pool", s.refl),
        ("mixed agnostic", s.mixed_agn),
        ("mixed reflective", s.mixed_ref),
    ] {
        writeln!(out, "| {label} | {v} |").expect("string write");
    }
    writeln!(out, "\nRecords: {} (lambda_ref {}), sha256 `{}`", m.records, m.lambda_ref, m.sha256).expect("string write");
    out
}
