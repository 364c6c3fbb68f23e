use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::desk::{all_hold, Cond, DeskApp, DeskState, WidgetKind};
use super::EnvError;

/// Default step caps for synthesis rollouts and for evaluation episodes.
pub const SYNTHESIS_MAX_STEPS: u32 = 30;
pub const EVAL_MAX_STEPS: u32 = 50;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum StateOp {
    SetVar { var: String, value: String },
    Focus { widget: String },
    ScrollTo { offset: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Milestone {
    pub description: String,
    pub predicate: Vec<Cond>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub instruction: String,
    pub snapshot_id: String,
    #[serde(default)]
    pub setup_ops: Vec<StateOp>,
    pub milestones: Vec<Milestone>,
    pub goal_predicate: Vec<Cond>,
    pub max_steps: u32,
    #[serde(default)]
    pub stochasticity: f64,
    #[serde(default)]
    pub seed: u64,
}

impl TaskSpec {
    /// Checks the field invariants that do not need the snapshot.
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::Config(format!("task {}: {msg}", self.task_id)));
        if self.max_steps < 1 {
            return bad("max_steps must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.stochasticity) {
            return bad(format!("stochasticity {} outside [0,1]", self.stochasticity));
        }
        let Some(last) = self.milestones.last() else {
            return bad("milestones must not be empty".into());
        };
        // Structural implication: every condition of the final milestone is
        // also required by the goal.
        if let Some(c) = last
            .predicate
            .iter()
            .find(|c| !self.goal_predicate.contains(c))
        {
            return bad(format!(
                "goal predicate does not imply final milestone (missing {c:?})"
            ));
        }
        Ok(())
    }

    pub fn goal_holds(&self, state: &DeskState) -> bool {
        all_hold(&self.goal_predicate, state)
    }

    /// Applies the setup ops to the bare snapshot state.
    pub fn initial_state(&self, app: &DeskApp) -> Result<DeskState, EnvError> {
        let mut state = DeskState::initial(app);
        for op in &self.setup_ops {
            match op {
                StateOp::SetVar { var, value } => {
                    if var.is_empty() || var == "scroll" || var == "focus" {
                        return Err(EnvError::TaskSetup(format!(
                            "task {}: cannot set reserved variable `{var}`",
                            self.task_id
                        )));
                    }
                    state.vars.insert(var.clone(), value.clone());
                }
                StateOp::Focus { widget } => match app.widget(widget) {
                    Some(w) if w.kind == WidgetKind::TextField => state.focus = Some(w.id.clone()),
                    _ => {
                        return Err(EnvError::TaskSetup(format!(
                            "task {}: `{widget}` is not a text field",
                            self.task_id
                        )))
                    }
                },
                StateOp::ScrollTo { offset } => {
                    if *offset > app.max_scroll {
                        return Err(EnvError::TaskSetup(format!(
                            "task {}: scroll offset {offset} beyond {}",
                            self.task_id, app.max_scroll
                        )));
                    }
                    state.scroll = *offset;
                }
            }
        }
        Ok(state)
    }

    pub fn from_json(text: &str) -> Result<Self, EnvError> {
        let task: TaskSpec =
            serde_json::from_str(text).map_err(|e| EnvError::Config(format!("task file: {e}")))?;
        task.validate()?;
        Ok(task)
    }
}

/// Read-only registry of base snapshots, keyed by snapshot id.
#[derive(Debug, Clone, Default)]
pub struct SnapshotRegistry {
    apps: BTreeMap<String, Arc<DeskApp>>,
}

impl SnapshotRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, app: DeskApp) -> Arc<DeskApp> {
        let app = Arc::new(app);
        self.apps.insert(app.id.clone(), Arc::clone(&app));
        app
    }

    pub fn get(&self, id: &str) -> Result<Arc<DeskApp>, EnvError> {
        self.apps
            .get(id)
            .cloned()
            .ok_or_else(|| EnvError::UnknownSnapshot(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.apps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.apps.is_empty()
    }

    /// Loads every `<id>.json` under `dir`. The file stem must equal the id.
    pub fn load_dir(dir: &Path) -> Result<Self, EnvError> {
        let mut reg = SnapshotRegistry::new();
        if !dir.exists() {
            return Ok(reg);
        }
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for p in paths {
            let text = fs::read_to_string(&p)?;
            let app: DeskApp = serde_json::from_str(&text)
                .map_err(|e| EnvError::Integrity(format!("{}: {e}", p.display())))?;
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            if stem != app.id {
                return Err(EnvError::Integrity(format!(
                    "{} holds snapshot `{}`",
                    p.display(),
                    app.id
                )));
            }
            reg.register(app);
        }
        Ok(reg)
    }
}
