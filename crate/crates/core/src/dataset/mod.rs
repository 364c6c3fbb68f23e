//! Turns judged trees into training instances: posterior filtering, step
//! masking, reflection splitting, task balancing, near-duplicate removal,
//! mixing and serialization.

pub mod minhash;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::StateHash;
use crate::expansion::stable_hash;
use crate::oracles::{ActionCritic, OracleError, ProgressCritic, ProgressVerdict, ReflectionIdentifier};
use crate::tree::persist::write_atomic;
use crate::tree::{BranchKind, EdgeId, Trajectory, TrajectoryTree, TreeError};

pub use minhash::{dedup_indices, dedup_indices_brute, ngrams, DedupParams, MinHashSignature};

pub const DATASET_FORMAT: &str = "cotree-dataset";
pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const PIPELINE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const HISTORY_IMAGE_CAP: usize = 5;
pub const SYSTEM_PROMPT: &str = "You operate a desktop application. Given the task, your previous steps and \
the current screen, reply with a Thought, an Assessment of the current state and exactly one Action.";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("mixture infeasible: need {needed} {side} instances but only {available} are available")]
    MixtureInfeasible {
        side: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed dataset record: {0}")]
    Format(String),
    #[error("dataset I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub task_id: String,
    pub policy_id: String,
    pub branch_kind: BranchKind,
    /// Leaf node id of the source trajectory within its task tree.
    pub trajectory_id: u32,
    /// 1-based step index on the source trajectory.
    pub step: usize,
    pub history_image_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub observation: StateHash,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub instruction: String,
    pub history: Vec<HistoryEntry>,
    pub observation: StateHash,
    pub target: String,
    pub reflection: bool,
    pub provenance: Provenance,
}

impl TrainingInstance {
    fn order_key(&self) -> (&str, u32, usize) {
        (&self.provenance.task_id, self.provenance.trajectory_id, self.provenance.step)
    }

    pub fn record_id(&self) -> String {
        format!(
            "{}/{}/{}",
            self.provenance.task_id, self.provenance.trajectory_id, self.provenance.step
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub agn: Vec<TrainingInstance>,
    #[serde(rename = "ref")]
    pub refl: Vec<TrainingInstance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub lambda_ref: f64,
    pub total: usize,
    pub seed: u64,
}

impl MixtureConfig {
    pub fn n_ref(&self) -> usize {
        (self.lambda_ref * self.total as f64).round() as usize
    }
}

/// True when a trajectory crosses a flagged transition or a stale node.
pub fn is_flagged(tree: &TrajectoryTree, traj: &Trajectory) -> bool {
    traj.edges.iter().any(|&e| tree.edge(e).spurious)
        || traj.nodes.iter().any(|&n| tree.node(n).is_ok_and(|x| x.stale))
}

/// Keeps the trajectories with no flagged transition, in leaf-id order.
pub fn posterior_filter(tree: &TrajectoryTree) -> Vec<Trajectory> {
    let mut all = tree.enumerate_trajectories();
    all.sort_by_key(|t| t.leaf);
    let total = all.len();
    let kept: Vec<Trajectory> = all.into_iter().filter(|t| !is_flagged(tree, t)).collect();
    log::info!(
        "task {}: posterior filter kept {}/{} trajectories",
        tree.task_id(),
        kept.len(),
        total
    );
    kept
}

/// Progress verdict for step `i` (1-based), from the tree's critic cache
/// when present.
fn progress_verdict(
    tree: &TrajectoryTree,
    traj: &Trajectory,
    i: usize,
    instruction: &str,
    progress: &dyn ProgressCritic,
) -> Result<ProgressVerdict, DatasetError> {
    let before = tree.node_observation(traj.nodes[i - 1])?;
    let action = &tree.edge(traj.edges[i - 1]).action;
    if let Some(v) = tree.cached_critic(before.state_hash, action) {
        return Ok(v.clone());
    }
    let history = tree.history(traj.nodes[i - 1])?;
    Ok(progress.assess_progress(instruction, before, action, &history)?)
}

/// Keep decision and critic reason for step `i` (1-based).
fn judge_step(
    tree: &TrajectoryTree,
    traj: &Trajectory,
    i: usize,
    instruction: &str,
    progress: &dyn ProgressCritic,
    action: &dyn ActionCritic,
) -> Result<(bool, String), DatasetError> {
    let pv = progress_verdict(tree, traj, i, instruction, progress)?;
    if pv.c != 1 {
        return Ok((false, pv.reason));
    }
    let before = tree.node_observation(traj.nodes[i - 1])?;
    let after = tree.node_observation(traj.nodes[i])?;
    let av = action.verify_action(before, &tree.edge(traj.edges[i - 1]).action, after)?;
    Ok((av == 1, pv.reason))
}

/// 1-based indices of the steps both critics accept.
pub fn mask_steps(
    tree: &TrajectoryTree,
    traj: &Trajectory,
    instruction: &str,
    progress: &dyn ProgressCritic,
    action: &dyn ActionCritic,
) -> Result<Vec<usize>, DatasetError> {
    let mut kept = Vec::new();
    for i in 1..=traj.edges.len() {
        if judge_step(tree, traj, i, instruction, progress, action)?.0 {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// The thought part of an agent output of the form `thought\nAction: ...`.
pub fn thought_of(output: &str) -> &str {
    match output.rsplit_once("\nAction: ") {
        Some((t, _)) => t,
        None if output.starts_with("Action: ") => "",
        None => output,
    }
}

/// Deterministic target template merging the policy thought and the critic
/// reason.
pub fn canonical_target(output: &str, reason: &str, action: &str) -> String {
    format!("Thought:\n{}\nAssessment: {reason}\nAction: {action}", thought_of(output).trim())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskYield {
    pub task_id: String,
    pub trajectories: usize,
    pub kept_trajectories: usize,
    /// Distinct transitions on kept trajectories.
    pub steps: usize,
    pub kept_steps: usize,
}

/// One instance per distinct accepted transition on a kept trajectory,
/// attributed to the smallest kept leaf that contains it.
pub fn build_instances(
    tree: &TrajectoryTree,
    instruction: &str,
    policy_id: &str,
    progress: &dyn ProgressCritic,
    action: &dyn ActionCritic,
) -> Result<(Vec<TrainingInstance>, TaskYield), DatasetError> {
    let kept = posterior_filter(tree);
    let mut yields = TaskYield {
        task_id: tree.task_id().to_string(),
        trajectories: tree.leaves().len(),
        kept_trajectories: kept.len(),
        ..Default::default()
    };
    let mut seen: BTreeSet<EdgeId> = BTreeSet::new();
    let mut out = Vec::new();
    for traj in &kept {
        for i in 1..=traj.edges.len() {
            let eid = traj.edges[i - 1];
            if !seen.insert(eid) {
                continue;
            }
            yields.steps += 1;
            let (keep, reason) = judge_step(tree, traj, i, instruction, progress, action)?;
            if !keep {
                continue;
            }
            yields.kept_steps += 1;
            let edge = tree.edge(eid);
            let history = (1..i)
                .map(|j| {
                    Ok(HistoryEntry {
                        observation: tree.node(traj.nodes[j - 1])?.observation,
                        output: tree.edge(traj.edges[j - 1]).agent_output.clone(),
                    })
                })
                .collect::<Result<Vec<_>, TreeError>>()?;
            out.push(TrainingInstance {
                instruction: instruction.to_string(),
                history,
                observation: tree.node(traj.nodes[i - 1])?.observation,
                target: canonical_target(&edge.agent_output, &reason, &edge.action.canonical_form()),
                reflection: false,
                provenance: Provenance {
                    task_id: tree.task_id().to_string(),
                    policy_id: policy_id.to_string(),
                    branch_kind: edge.branch_kind,
                    trajectory_id: traj.leaf.0,
                    step: i,
                    history_image_cap: HISTORY_IMAGE_CAP,
                },
            });
        }
    }
    Ok((out, yields))
}

/// Routes each instance by the reflection identifier applied to its target.
pub fn split_reflection(
    instances: Vec<TrainingInstance>,
    identifier: &dyn ReflectionIdentifier,
) -> Result<DatasetSplit, DatasetError> {
    let mut split = DatasetSplit::default();
    for mut inst in instances {
        inst.reflection = identifier.detect_reflection(&inst.instruction, &[], &inst.target)? == 1;
        if inst.reflection {
            split.refl.push(inst);
        } else {
            split.agn.push(inst);
        }
    }
    Ok(split)
}

fn task_seed(seed: u64, task_id: &str) -> u64 {
    seed ^ stable_hash(task_id)
}

/// Caps every task at the lower median of the per-task instance counts,
/// keeping a seeded uniform sample of an over-full task. Input and output
/// are in (task, trajectory, step) order.
pub fn balance_tasks(instances: Vec<TrainingInstance>, seed: u64) -> (Vec<TrainingInstance>, Option<usize>) {
    let mut by_task: BTreeMap<String, Vec<TrainingInstance>> = BTreeMap::new();
    for inst in instances {
        by_task.entry(inst.provenance.task_id.clone()).or_default().push(inst);
    }
    let mut counts: Vec<usize> = by_task.values().map(Vec::len).collect();
    if counts.is_empty() {
        return (Vec::new(), None);
    }
    counts.sort_unstable();
    let cap = counts[(counts.len() - 1) / 2];
    let mut out = Vec::new();
    for (task, mut items) in by_task {
        if items.len() > cap {
            let mut rng = ChaCha8Rng::seed_from_u64(task_seed(seed, &task));
            let mut keep = index::sample(&mut rng, items.len(), cap).into_vec();
            keep.sort_unstable();
            let keep: BTreeSet<usize> = keep.into_iter().collect();
            items = items
                .into_iter()
                .enumerate()
                .filter(|(i, _)| keep.contains(i))
                .map(|(_, x)| x)
                .collect();
        }
        out.extend(items);
    }
    (out, Some(cap))
}

/// Greedy MinHash dedup over the targets, in input order.
pub fn dedup(instances: Vec<TrainingInstance>, params: &DedupParams) -> Vec<TrainingInstance> {
    let texts: Vec<&str> = instances.iter().map(|i| i.target.as_str()).collect();
    let keep: BTreeSet<usize> = dedup_indices(&texts, params).into_iter().collect();
    instances
        .into_iter()
        .enumerate()
        .filter(|(i, _)| keep.contains(i))
        .map(|(_, x)| x)
        .collect()
}

/// The largest total a split supports at the given fraction.
pub fn max_feasible_total(split: &DatasetSplit, lambda_ref: f64) -> usize {
    let (agn, refl) = (split.agn.len(), split.refl.len());
    let mut hi = agn + refl;
    let feasible = |t: usize| {
        let cfg = MixtureConfig {
            lambda_ref,
            total: t,
            seed: 0,
        };
        cfg.n_ref() <= refl && t - cfg.n_ref().min(t) <= agn
    };
    while hi > 0 && !feasible(hi) {
        hi -= 1;
    }
    hi
}

/// Seeded sample without replacement: `round(lambda * total)` reflection
/// instances and the rest reflection-agnostic, then shuffled.
pub fn mix(split: &DatasetSplit, config: &MixtureConfig) -> Result<Vec<TrainingInstance>, DatasetError> {
    if !(0.0..=1.0).contains(&config.lambda_ref) {
        return Err(DatasetError::Config(format!(
            "lambda_ref {} is outside [0, 1]",
            config.lambda_ref
        )));
    }
    let n_ref = config.n_ref().min(config.total);
    let n_agn = config.total - n_ref;
    if n_ref > split.refl.len() {
        return Err(DatasetError::MixtureInfeasible {
            side: "ref",
            needed: n_ref,
            available: split.refl.len(),
        });
    }
    if n_agn > split.agn.len() {
        return Err(DatasetError::MixtureInfeasible {
            side: "agn",
            needed: n_agn,
            available: split.agn.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pick = |pool: &[TrainingInstance], n: usize, rng: &mut ChaCha8Rng| {
        let mut idx = index::sample(rng, pool.len(), n).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| pool[i].clone()).collect::<Vec<_>>()
    };
    let mut out = pick(&split.refl, n_ref, &mut rng);
    out.extend(pick(&split.agn, n_agn, &mut rng));
    out.shuffle(&mut rng);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Message {
    role: Role,
    content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    observation: Option<StateHash>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    train: bool,
}

/// One line of `train.jsonl`. Only the final assistant message carries
/// `train: true`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    messages: Vec<Message>,
    reflection: bool,
    provenance: Provenance,
}

fn msg(role: Role, content: impl Into<String>, observation: Option<StateHash>, train: bool) -> Message {
    Message {
        role,
        content: content.into(),
        observation,
        train,
    }
}

fn screen(h: StateHash) -> String {
    format!("[screen {h}]")
}

fn to_record(inst: &TrainingInstance) -> Record {
    let mut messages = vec![
        msg(Role::System, SYSTEM_PROMPT, None, false),
        msg(Role::User, inst.instruction.clone(), None, false),
    ];
    for h in &inst.history {
        messages.push(msg(Role::User, screen(h.observation), Some(h.observation), false));
        messages.push(msg(Role::Assistant, h.output.clone(), None, false));
    }
    messages.push(msg(Role::User, screen(inst.observation), Some(inst.observation), false));
    messages.push(msg(Role::Assistant, inst.target.clone(), None, true));
    Record {
        id: inst.record_id(),
        messages,
        reflection: inst.reflection,
        provenance: inst.provenance.clone(),
    }
}

fn from_record(rec: Record) -> Result<TrainingInstance, DatasetError> {
    let bad = |m: &str| DatasetError::Format(format!("{}: {m}", rec.id));
    let n = rec.messages.len();
    if n < 4 || n % 2 != 0 {
        return Err(bad("unexpected message count"));
    }
    let m = &rec.messages;
    if m[0].role != Role::System || m[1].role != Role::User || m[1].observation.is_some() {
        return Err(bad("missing system or instruction message"));
    }
    if m.iter().take(n - 1).any(|x| x.train) || !m[n - 1].train || m[n - 1].role != Role::Assistant {
        return Err(bad("only the final assistant message may be trainable"));
    }
    let mut history = Vec::new();
    for pair in m[2..n - 2].chunks(2) {
        match (&pair[0], &pair[1]) {
            (o, a) if o.role == Role::User && a.role == Role::Assistant && a.observation.is_none() => {
                let observation = o.observation.ok_or_else(|| bad("history step without observation"))?;
                history.push(HistoryEntry {
                    observation,
                    output: a.content.clone(),
                });
            }
            _ => return Err(bad("history steps must alternate screen and output")),
        }
    }
    let current = m[n - 2].observation.filter(|_| m[n - 2].role == Role::User);
    let observation = current.ok_or_else(|| bad("missing current observation"))?;
    if history.len() + 1 != rec.provenance.step {
        return Err(bad("history length does not match the step index"));
    }
    if m[n - 1].content.is_empty() {
        return Err(bad("empty target"));
    }
    Ok(TrainingInstance {
        instruction: m[1].content.clone(),
        history,
        observation,
        target: m[n - 1].content.clone(),
        reflection: rec.reflection,
        provenance: rec.provenance,
    })
}

pub fn to_jsonl(instances: &[TrainingInstance]) -> Result<Vec<u8>, DatasetError> {
    let mut out = Vec::new();
    for inst in instances {
        serde_json::to_writer(&mut out, &to_record(inst)).map_err(|e| DatasetError::Format(e.to_string()))?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn parse_jsonl(text: &str) -> Result<Vec<TrainingInstance>, DatasetError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let rec: Record =
                serde_json::from_str(l).map_err(|e| DatasetError::Format(format!("line {}: {e}", i + 1)))?;
            from_record(rec)
        })
        .collect()
}

/// Writes the instances atomically; returns the record count.
pub fn serialize(instances: &[TrainingInstance], out_path: &Path) -> Result<usize, DatasetError> {
    write_atomic(out_path, &to_jsonl(instances)?)?;
    Ok(instances.len())
}

pub fn read_dataset(path: &Path) -> Result<Vec<TrainingInstance>, DatasetError> {
    parse_jsonl(&fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub lambda_ref: f64,
    /// Mixture size; the largest feasible size when absent.
    pub total: Option<usize>,
    pub seed: u64,
    pub balance_tasks: bool,
    pub dedup: DedupParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            lambda_ref: 0.1,
            total: None,
            seed: 0,
            balance_tasks: true,
            dedup: DedupParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(0.0..=1.0).contains(&self.lambda_ref) {
            return Err(DatasetError::Config(format!("lambda_ref {} is outside [0, 1]", self.lambda_ref)));
        }
        if self.total == Some(0) {
            return Err(DatasetError::Config("total must be positive".into()));
        }
        self.dedup.validate().map_err(DatasetError::Config)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub trajectories: usize,
    pub kept_trajectories: usize,
    pub steps: usize,
    pub kept_steps: usize,
    pub balanced: usize,
    pub deduplicated: usize,
    pub agn: usize,
    #[serde(rename = "ref")]
    pub refl: usize,
    pub mixed_agn: usize,
    pub mixed_ref: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub pipeline_version: String,
    pub records: usize,
    pub lambda_ref: f64,
    pub total: usize,
    pub seed: u64,
    pub dedup: DedupParams,
    pub task_cap: Option<usize>,
    pub history_image_cap: usize,
    pub stages: StageCounts,
    pub tasks: Vec<TaskYield>,
    /// SHA-256 of the record file.
    #[serde(default)]
    pub sha256: String,
}

/// One judged tree plus the critics used to mask it.
pub struct TreeInput<'a> {
    pub tree: &'a TrajectoryTree,
    pub instruction: &'a str,
    pub policy_id: &'a str,
    pub progress: &'a dyn ProgressCritic,
    pub action: &'a dyn ActionCritic,
}

#[derive(Debug, Clone)]
pub struct DatasetBuild {
    pub instances: Vec<TrainingInstance>,
    pub split: DatasetSplit,
    pub manifest: DatasetManifest,
}

/// Runs every stage. Per-task work runs in parallel; results merge in
/// (task, trajectory, step) order.
pub fn build_dataset(
    inputs: &[TreeInput<'_>],
    identifier: &dyn ReflectionIdentifier,
    config: &PipelineConfig,
) -> Result<DatasetBuild, DatasetError> {
    config.validate()?;
    let per_task: Vec<(Vec<TrainingInstance>, TaskYield)> = inputs
        .par_iter()
        .map(|t| build_instances(t.tree, t.instruction, t.policy_id, t.progress, t.action))
        .collect::<Result<_, _>>()?;
    let mut stages = StageCounts::default();
    let mut tasks = Vec::new();
    let mut instances = Vec::new();
    for (items, y) in per_task {
        stages.trajectories += y.trajectories;
        stages.kept_trajectories += y.kept_trajectories;
        stages.steps += y.steps;
        stages.kept_steps += y.kept_steps;
        instances.extend(items);
        tasks.push(y);
    }
    tasks.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    instances.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
    let (instances, task_cap) = if config.balance_tasks {
        balance_tasks(instances, config.seed)
    } else {
        (instances, None)
    };
    stages.balanced = instances.len();
    let instances = dedup(instances, &config.dedup);
    stages.deduplicated = instances.len();
    let split = split_reflection(instances, identifier)?;
    stages.agn = split.agn.len();
    stages.refl = split.refl.len();
    let total = match config.total {
        Some(t) => t,
        None => max_feasible_total(&split, config.lambda_ref),
    };
    let mixture = MixtureConfig {
        lambda_ref: config.lambda_ref,
        total,
        seed: config.seed,
    };
    let mixed = mix(&split, &mixture)?;
    stages.mixed_ref = mixed.iter().filter(|i| i.reflection).count();
    stages.mixed_agn = mixed.len() - stages.mixed_ref;
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.to_string(),
        version: DATASET_FORMAT_VERSION,
        pipeline_version: PIPELINE_VERSION.to_string(),
        records: mixed.len(),
        lambda_ref: config.lambda_ref,
        total,
        seed: config.seed,
        dedup: config.dedup,
        task_cap,
        history_image_cap: HISTORY_IMAGE_CAP,
        stages,
        tasks,
        sha256: String::new(),
    };
    Ok(DatasetBuild {
        instances: mixed,
        split,
        manifest,
    })
}

/// Writes `train.jsonl` and `manifest.json` into `dir`.
pub fn write_dataset(build: &DatasetBuild, dir: &Path) -> Result<DatasetManifest, DatasetError> {
    let bytes = to_jsonl(&build.instances)?;
    let mut manifest = build.manifest.clone();
    manifest.sha256 = hex::encode(Sha256::digest(&bytes));
    write_atomic(&dir.join("train.jsonl"), &bytes)?;
    let mut text = serde_json::to_vec_pretty(&manifest).map_err(|e| DatasetError::Format(e.to_string()))?;
    text.push(b'\n');
    write_atomic(&dir.join("manifest.json"), &text)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::env::{generate_task, DeskApp, EnvHandle, TaskSpec};
    use crate::oracles::{
        ErrorInjectionProfile, ErrorType, MarkerReflectionIdentifier, OracleSet, StepContext, HistoryStep,
    };
    use crate::tree::RolloutStep;

    fn instance(task: &str, traj: u32, step: usize, target: &str, reflection: bool) -> TrainingInstance {
        TrainingInstance {
            instruction: "Do it".into(),
            history: (1..step)
                .map(|j| HistoryEntry {
                    observation: StateHash(j as u64),
                    output: format!("t{j}\nAction: CLICK(a)"),
                })
                .collect(),
            observation: StateHash(99),
            target: target.into(),
            reflection,
            provenance: Provenance {
                task_id: task.into(),
                policy_id: "p".into(),
                branch_kind: BranchKind::Parallel,
                trajectory_id: traj,
                step,
                history_image_cap: HISTORY_IMAGE_CAP,
            },
        }
    }

    fn pools(agn: usize, refl: usize) -> DatasetSplit {
        DatasetSplit {
            agn: (0..agn).map(|i| instance("a", i as u32, 1, "x", false)).collect(),
            refl: (0..refl).map(|i| instance("r", i as u32, 1, "y", true)).collect(),
        }
    }

    #[test]
    fn mix_counts_are_exact() {
        let split = pools(95_000, 12_000);
        let out = mix(&split, &MixtureConfig { lambda_ref: 0.1, total: 100_000, seed: 1 }).unwrap();
        assert_eq!(out.iter().filter(|i| i.reflection).count(), 10_000);
        assert_eq!(out.len(), 100_000);
        let pure = mix(&split, &MixtureConfig { lambda_ref: 0.0, total: 500, seed: 1 }).unwrap();
        assert!(pure.iter().all(|i| !i.reflection));
    }

    #[test]
    fn infeasible_mix_names_the_short_side() {
        let split = pools(100, 10);
        match mix(&split, &MixtureConfig { lambda_ref: 1.0, total: 50, seed: 0 }) {
            Err(DatasetError::MixtureInfeasible { side, needed, available }) => {
                assert_eq!((side, needed, available), ("ref", 50, 10));
            }
            other => panic!("{other:?}"),
        }
        match mix(&split, &MixtureConfig { lambda_ref: 0.0, total: 101, seed: 0 }) {
            Err(DatasetError::MixtureInfeasible { side, .. }) => assert_eq!(side, "agn"),
            other => panic!("{other:?}"),
        }
        assert_eq!(max_feasible_total(&split, 0.1), 104);
    }

    #[test]
    fn mix_is_seeded() {
        let split = pools(300, 40);
        let cfg = MixtureConfig { lambda_ref: 0.1, total: 200, seed: 7 };
        assert_eq!(mix(&split, &cfg).unwrap(), mix(&split, &cfg).unwrap());
    }

    #[test]
    fn jsonl_round_trip() {
        let items = vec![
            instance("t", 3, 1, "Thought:\nx\nAssessment: on plan\nAction: CLICK(a)", false),
            instance("t", 3, 4, "Thought:\nREFLECT: a | FIX: b\nAssessment: on plan\nAction: TYPE(\"q\")", true),
        ];
        let bytes = to_jsonl(&items).unwrap();
        let back = parse_jsonl(std::str::from_utf8(&bytes).unwrap()).unwrap();
        assert_eq!(back, items);
        assert!(to_jsonl(&[]).unwrap().is_empty());
        let first: serde_json::Value = serde_json::from_slice(bytes.split(|b| *b == b'\n').next().unwrap()).unwrap();
        let trainable: Vec<_> = first["messages"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|m| m["train"] == true)
            .collect();
        assert_eq!(trainable.len(), 1);
        assert_eq!(trainable[0]["content"], items[0].target);
    }

    #[test]
    fn parse_rejects_two_trainable_messages() {
        let bytes = to_jsonl(&[instance("t", 1, 2, "T", false)]).unwrap();
        let text = String::from_utf8(bytes).unwrap().replacen("\"role\":\"assistant\",", "\"role\":\"assistant\",\"train\":true,", 1);
        assert!(parse_jsonl(&text).is_err());
    }

    #[test]
    fn balance_caps_at_lower_median() {
        let mut items = Vec::new();
        for (task, n) in [("a", 2usize), ("b", 5), ("c", 9), ("d", 4)] {
            items.extend((0..n).map(|i| instance(task, i as u32, 1, "x", false)));
        }
        let (out, cap) = balance_tasks(items, 3);
        assert_eq!(cap, Some(4));
        let count = |t: &str| out.iter().filter(|i| i.provenance.task_id == t).count();
        assert_eq!([count("a"), count("b"), count("c"), count("d")], [2, 4, 4, 4]);
        assert!(out.windows(2).all(|w| w[0].order_key() <= w[1].order_key()));
    }

    #[test]
    fn split_is_a_partition() {
        let items = vec![
            instance("t", 1, 1, "Thought:\nfine\nAction: CLICK(a)", false),
            instance("t", 1, 2, "Thought:\nREFLECT: x | FIX: y\nAction: CLICK(a)", false),
        ];
        let split = split_reflection(items, &MarkerReflectionIdentifier).unwrap();
        assert_eq!((split.agn.len(), split.refl.len()), (1, 1));
        assert!(split.refl.iter().all(|i| i.reflection));
    }

    fn setup(index: usize) -> (Arc<DeskApp>, TaskSpec) {
        let (app, task) = generate_task(index, 11);
        (Arc::new(app), task)
    }

    fn scripted_tree(task: &TaskSpec, app: &Arc<DeskApp>, profile: ErrorInjectionProfile, seeds: u64) -> TrajectoryTree {
        let oracles = OracleSet::scripted(task, Arc::clone(app), profile, ErrorInjectionProfile::clean());
        let task = &Arc::new(task.clone());
        let (_, root) = EnvHandle::start(task, app, 0).unwrap();
        let mut tree = TrajectoryTree::new(task.task_id.clone(), root);
        for s in 0..seeds {
            let (mut h, mut obs) = EnvHandle::start(task, app, s).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut hist: Vec<HistoryStep> = Vec::new();
            let mut steps = Vec::new();
            while !h.is_terminated() && h.remaining_steps() > 0 {
                let ctx = StepContext { instruction: &task.instruction, observation: &obs, history: &hist };
                let st = oracles.policy.propose_action(&ctx, &mut rng).unwrap();
                let next = h.step(&st.action).unwrap();
                hist.push(HistoryStep {
                    observation: Arc::new(obs.clone()),
                    output: st.output(),
                    action: st.action.clone(),
                    label: st.label.clone(),
                });
                steps.push(RolloutStep {
                    action: st.action.clone(),
                    observation: Arc::new(next.clone()),
                    output: st.output(),
                    spurious: h.last_transition_spurious(),
                    label: st.label,
                });
                obs = next;
            }
            tree.insert_rollout(tree.root(), steps, BranchKind::Parallel).unwrap();
        }
        tree
    }

    #[test]
    fn clean_plan_keeps_every_step() {
        let (app, task) = setup(0);
        let tree = scripted_tree(&task, &app, ErrorInjectionProfile::clean(), 3);
        let oracles = OracleSet::scripted(&task, Arc::clone(&app), ErrorInjectionProfile::clean(), ErrorInjectionProfile::clean());
        for traj in posterior_filter(&tree) {
            let kept = mask_steps(&tree, &traj, &task.instruction, &*oracles.progress, &*oracles.action).unwrap();
            assert_eq!(kept, (1..=traj.edges.len()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn planted_wrong_widget_step_is_the_only_removal() {
        let (app, task) = setup(1);
        let profile = ErrorInjectionProfile::clean().with_forced(3, ErrorType::IncorrectUiElement);
        let tree = scripted_tree(&task, &app, profile, 1);
        let oracles = OracleSet::scripted(&task, Arc::clone(&app), ErrorInjectionProfile::clean(), ErrorInjectionProfile::clean());
        let traj = posterior_filter(&tree).remove(0);
        let kept = mask_steps(&tree, &traj, &task.instruction, &*oracles.progress, &*oracles.action).unwrap();
        let removed: Vec<usize> = (1..=traj.edges.len()).filter(|i| !kept.contains(i)).collect();
        let planted: Vec<usize> = (1..=traj.edges.len())
            .filter(|&i| !tree.edge(traj.edges[i - 1]).label.as_ref().unwrap().correct)
            .collect();
        assert!(planted.contains(&3));
        assert_eq!(removed, planted);
        assert!(kept.contains(&1) && kept.contains(&2));
    }

    #[test]
    fn flagged_transition_drops_whole_trajectory() {
        let (app, mut task) = setup(2);
        task.stochasticity = 0.0;
        let mut tree = scripted_tree(&task, &app, ErrorInjectionProfile::clean(), 2);
        assert_eq!(posterior_filter(&tree).len(), tree.leaves().len());
        let leaf = tree.leaves()[0];
        let mark = tree.path_nodes(leaf).unwrap()[2];
        tree.mark_stale(mark).unwrap();
        let kept = posterior_filter(&tree);
        assert!(kept.iter().all(|t| !t.nodes.contains(&mark)));
    }

    #[test]
    fn instances_have_history_of_step_minus_one() {
        let (app, task) = setup(3);
        let tree = scripted_tree(&task, &app, ErrorInjectionProfile::uniform(0.05, 0.5), 6);
        let oracles = OracleSet::scripted(&task, Arc::clone(&app), ErrorInjectionProfile::clean(), ErrorInjectionProfile::clean());
        let (items, y) = build_instances(&tree, &task.instruction, "p", &*oracles.progress, &*oracles.action).unwrap();
        assert_eq!(items.len(), y.kept_steps);
        let keys: BTreeSet<(u32, usize)> = items.iter().map(|i| (i.provenance.trajectory_id, i.provenance.step)).collect();
        assert_eq!(keys.len(), items.len());
        for i in &items {
            assert_eq!(i.history.len(), i.provenance.step - 1);
            assert!(!i.target.is_empty());
        }
    }
}
