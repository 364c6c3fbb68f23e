//! Deterministic, snapshot-restorable environment and the ScriptedDesk
//! synthetic GUI.

pub mod action;
pub mod desk;
pub mod generate;
pub mod handle;
pub mod planner;
pub mod task;

use thiserror::Error;

pub use action::{Action, ActionParseError, ScrollDirection, TermStatus};
pub use desk::{
    apply, Cond, DeskApp, DeskState, Effect, EpisodeStatus, HotkeyDef, Observation, StateHash,
    WidgetDef, WidgetKind, WidgetView,
};
pub use generate::generate_task;
pub use handle::{init_env, replay_prefix, EnvHandle, SnapshotBlob};
pub use planner::DeskPlanner;
pub use task::{
    Milestone, SnapshotRegistry, StateOp, TaskSpec, EVAL_MAX_STEPS, SYNTHESIS_MAX_STEPS,
};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("unknown snapshot `{0}`")]
    UnknownSnapshot(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("task setup failed: {0}")]
    TaskSetup(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
