//! Explore-recovery co-expansion: parallel seeding, then rounds of
//! fragility-driven exploration (FDE) and experience-informed recovery
//! (EIR) over one task's trajectory tree.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::{replay_prefix, DeskApp, EnvError, EnvHandle, Observation, TaskSpec, SYNTHESIS_MAX_STEPS};
use crate::oracles::{HistoryStep, OracleError, OracleSet, StepContext, DEFAULT_K_CAND};
use crate::tree::{BranchKind, NodeId, RolloutStep, StepSuccess, TrajectoryTree, TreeError, TreePartition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoExpansionConfig {
    pub parallel_n: u32,
    pub rounds: u32,
    pub exploration_c: f64,
    pub step_success_samples: u32,
    pub max_steps: u32,
    pub base_seed: u64,
    pub k_cand: usize,
}

impl Default for CoExpansionConfig {
    fn default() -> Self {
        CoExpansionConfig {
            parallel_n: 4,
            rounds: 32,
            exploration_c: 0.25,
            step_success_samples: 4,
            max_steps: SYNTHESIS_MAX_STEPS,
            base_seed: 0,
            k_cand: DEFAULT_K_CAND,
        }
    }
}

impl CoExpansionConfig {
    pub fn validate(&self) -> Result<(), CoExpansionError> {
        let fail = |m: &str| Err(CoExpansionError::Config(m.to_string()));
        if self.parallel_n == 0 {
            return fail("parallel_n must be positive");
        }
        if !(self.exploration_c >= 0.0 && self.exploration_c.is_finite()) {
            return fail("exploration_c must be a non-negative number");
        }
        if self.step_success_samples == 0 {
            return fail("step_success_samples must be positive");
        }
        if self.max_steps == 0 {
            return fail("max_steps must be positive");
        }
        if self.k_cand == 0 {
            return fail("k_cand must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CoExpansionError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

fn bonus(v_node: u32, v_parent: u32, c: f64) -> f64 {
    c * ((v_parent as f64 + 1.0).ln() / (v_node as f64 + 1.0)).sqrt()
}

/// (1 - r) + c * sqrt(ln(v_parent + 1) / (v_node + 1)).
pub fn fragility_score(r: f64, v_node: u32, v_parent: u32, c: f64) -> f64 {
    (1.0 - r) + bonus(v_node, v_parent, c)
}

/// p + c * sqrt(ln(v_parent + 1) / (v_node + 1)).
pub fn recovery_score(p: f64, v_node: u32, v_parent: u32, c: f64) -> f64 {
    p + bonus(v_node, v_parent, c)
}

/// Deterministic sub-seed for a labelled purpose.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    tags.iter().fold(mix(base), |acc, t| mix(acc ^ mix(*t)))
}

/// Stable 64-bit hash of a string: the first eight bytes of its SHA-256.
pub fn stable_hash(s: &str) -> u64 {
    let digest = Sha256::digest(s.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Non-leaf, non-stale nodes on at least one successful path.
pub fn fde_candidates(tree: &TrajectoryTree, partition: &TreePartition) -> Vec<NodeId> {
    partition
        .corr_nodes
        .iter()
        .copied()
        .filter(|&n| !tree.is_leaf(n) && !tree.node(n).map_or(true, |x| x.stale))
        .collect()
}

/// Argmax of the fragility score over [`fde_candidates`], ties to the
/// smallest node id. Every candidate needs a cached step-success estimate.
pub fn select_fragile_node(
    tree: &TrajectoryTree,
    partition: &TreePartition,
    c: f64,
) -> Result<(NodeId, f64), CoExpansionError> {
    let mut best: Option<(NodeId, f64)> = None;
    for n in fde_candidates(tree, partition) {
        let node = tree.node(n)?;
        let r = node
            .step_success
            .as_ref()
            .ok_or_else(|| CoExpansionError::Precondition(format!("node {n} has no step-success estimate")))?
            .mean;
        let score = fragility_score(r, node.v_fde, tree.parent_visits(n, |x| x.v_fde)?, c);
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((n, score));
        }
    }
    best.ok_or_else(|| CoExpansionError::Precondition("no expandable node in the successful subtree".to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub guidance: String,
    pub priority: f64,
    pub source_leaf: NodeId,
    /// 1-based step on the source trajectory.
    pub step: usize,
}

/// The merged candidate error-state set, keyed by node.
pub type CandidateSet = BTreeMap<NodeId, Candidate>;

/// Keeps the higher-priority proposal on collision; the first one wins ties.
pub fn merge_candidate(set: &mut CandidateSet, node: NodeId, cand: Candidate) {
    match set.get(&node) {
        Some(existing) if existing.priority >= cand.priority => {}
        _ => {
            set.insert(node, cand);
        }
    }
}

/// Argmax of the recovery score over the candidate set, ties to the
/// smallest node id. Stale nodes are skipped.
pub fn select_recovery_node(
    set: &CandidateSet,
    tree: &TrajectoryTree,
    c: f64,
) -> Result<(NodeId, Candidate, f64), CoExpansionError> {
    let mut best: Option<(NodeId, &Candidate, f64)> = None;
    for (&n, cand) in set {
        let node = tree.node(n)?;
        if node.stale {
            continue;
        }
        let score = recovery_score(cand.priority, node.v_eir, tree.parent_visits(n, |x| x.v_eir)?, c);
        if best.is_none_or(|(_, _, b)| score > b) {
            best = Some((n, cand, score));
        }
    }
    best.map(|(n, c, s)| (n, c.clone(), s))
        .ok_or_else(|| CoExpansionError::Precondition("empty candidate set".to_string()))
}

/// Samples `n` policy actions at the node, scores each with the progress
/// critic (through the tree's critic cache) and caches the mean on the node.
pub fn calc_step_success(
    tree: &mut TrajectoryTree,
    node: NodeId,
    instruction: &str,
    oracles: &OracleSet,
    n: u32,
    rng: &mut ChaCha8Rng,
) -> Result<StepSuccess, CoExpansionError> {
    let obs = Arc::clone(tree.node_observation(node)?);
    let history = tree.history(node)?;
    let mut samples = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let ctx = StepContext {
            instruction,
            observation: &obs,
            history: &history,
        };
        let step = oracles.policy.propose_action(&ctx, rng)?;
        let c = match tree.cached_critic(obs.state_hash, &step.action) {
            Some(v) => v.c,
            None => {
                let v = oracles
                    .progress
                    .assess_progress(instruction, &obs, &step.action, &history)?;
                let c = v.c;
                tree.cache_critic(obs.state_hash, &step.action, v);
                c
            }
        };
        samples.push(c);
    }
    let est = StepSuccess::from_samples(samples);
    tree.set_step_success(node, est.clone())?;
    Ok(est)
}

/// Runs the reflector over every failed trajectory and merges the
/// proposals by node.
pub fn localize_errors(
    tree: &TrajectoryTree,
    partition: &TreePartition,
    instruction: &str,
    oracles: &OracleSet,
    k_cand: usize,
) -> Result<CandidateSet, CoExpansionError> {
    let mut set = CandidateSet::new();
    for &leaf in &partition.fail_trajectories {
        let traj = tree.trajectory(leaf)?;
        if traj.nodes.iter().any(|&n| tree.node(n).is_ok_and(|x| x.stale)) {
            continue;
        }
        let verdict = tree.verdict(leaf).ok_or(TreeError::IncompleteJudgment(leaf))?;
        let mut experiences = Vec::new();
        for nb in tree.neighbor_trajectories(leaf)? {
            let v = tree.verdict(nb).ok_or_else(|| {
                TreeError::Integrity(format!("neighbor trajectory {nb} has no stored experience"))
            })?;
            experiences.push(&v.experience);
        }
        let record = tree.record(leaf)?;
        let proposals = oracles.reflector.propose_error_candidates(
            instruction,
            &record,
            verdict,
            &experiences,
            k_cand,
        )?;
        for p in proposals {
            if p.step == 0 || p.step > traj.edges.len() || !(0.0..=1.0).contains(&p.priority) {
                return Err(OracleError::ContractViolation(format!(
                    "proposal at step {} with priority {} is invalid for a {}-step trajectory",
                    p.step,
                    p.priority,
                    traj.edges.len()
                ))
                .into());
            }
            let node = traj.nodes[p.step - 1];
            merge_candidate(
                &mut set,
                node,
                Candidate {
                    guidance: p.guidance,
                    priority: p.priority,
                    source_leaf: leaf,
                    step: p.step,
                },
            );
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundOutcome {
    /// A new leaf was added.
    Inserted,
    /// The rollout retraced an existing path.
    Duplicate,
    /// The arm's guard failed: no trajectory on that side of the partition.
    GuardSkipped,
    /// The guard held but nothing could be selected.
    NoCandidates,
    /// Replaying the selected node's prefix diverged; the node is now stale.
    Stale,
}

/// One structured log line per arm per round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub arm: BranchKind,
    pub outcome: RoundOutcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected: Option<NodeId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leaf: Option<NodeId>,
    /// EIR only: the failed trajectory the candidate came from.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_leaf: Option<NodeId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
}

impl RoundRecord {
    fn new(round: u32, arm: BranchKind, outcome: RoundOutcome) -> Self {
        RoundRecord {
            round,
            arm,
            outcome,
            selected: None,
            score: None,
            leaf: None,
            source_leaf: None,
            step: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionStats {
    pub parallel: u32,
    pub fde: u32,
    pub eir: u32,
    pub duplicates: u32,
    pub stale: u32,
    pub skipped: u32,
}

#[derive(Debug, Clone)]
pub struct CoExpansionRun {
    pub tree: TrajectoryTree,
    pub rounds: Vec<RoundRecord>,
    pub stats: ExpansionStats,
}

struct Runner<'a> {
    task: Arc<TaskSpec>,
    app: Arc<DeskApp>,
    config: &'a CoExpansionConfig,
    oracles: &'a OracleSet,
}

impl Runner<'_> {
    fn rollout(
        &self,
        mut handle: EnvHandle,
        start: Observation,
        mut history: Vec<HistoryStep>,
        guidance: Option<&str>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<RolloutStep>, CoExpansionError> {
        let instruction = self.task.instruction.as_str();
        let mut obs = Arc::new(start);
        let mut steps = Vec::new();
        while !handle.is_terminated() && handle.remaining_steps() > 0 {
            let ctx = StepContext {
                instruction,
                observation: &obs,
                history: &history,
            };
            let step = match guidance {
                Some(g) if steps.is_empty() => self.oracles.recovery.propose_recovery_action(&ctx, g, rng)?,
                Some(_) => self.oracles.recovery.continue_rollout(&ctx, rng)?,
                None => self.oracles.policy.propose_action(&ctx, rng)?,
            };
            let next = Arc::new(handle.step(&step.action)?);
            let output = step.output();
            history.push(HistoryStep {
                observation: Arc::clone(&obs),
                output: output.clone(),
                action: step.action.clone(),
                label: step.label.clone(),
            });
            steps.push(RolloutStep {
                action: step.action,
                observation: Arc::clone(&next),
                output,
                spurious: handle.last_transition_spurious(),
                label: step.label,
            });
            obs = next;
        }
        Ok(steps)
    }

    fn judge_new(&self, tree: &mut TrajectoryTree, leaf: NodeId) -> Result<(), CoExpansionError> {
        let record = tree.record(leaf)?;
        let verdict = self.oracles.reward.judge_trajectory(&self.task.instruction, &record)?;
        tree.set_verdict(leaf, verdict)?;
        Ok(())
    }

    /// Replays the prefix to `node` and rolls out from there. `None` when
    /// the replay diverged.
    fn expand_from(
        &self,
        tree: &TrajectoryTree,
        node: NodeId,
        guidance: Option<&str>,
        seed: u64,
    ) -> Result<Option<Vec<RolloutStep>>, CoExpansionError> {
        let actions = tree.path_actions(node)?;
        let expected = tree.path_hashes(node)?;
        let env_seed = derive_seed(seed, &[0]);
        let (handle, mut observations) =
            replay_prefix(&self.task, &self.app, &actions, Some(&expected), env_seed)?;
        if handle.diverged() {
            return Ok(None);
        }
        let start = observations.pop().expect("replay returns the initial observation");
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
        self.rollout(handle, start, tree.history(node)?, guidance, &mut rng)
            .map(Some)
    }

    fn seed_tree(&self, stats: &mut ExpansionStats) -> Result<TrajectoryTree, CoExpansionError> {
        let base = self.config.base_seed;
        let (_, root) = EnvHandle::start(&self.task, &self.app, derive_seed(base, &[0, 0, 0]))?;
        let mut tree = TrajectoryTree::new(self.task.task_id.clone(), root);
        let rollouts: Vec<Result<Vec<RolloutStep>, CoExpansionError>> = (0..self.config.parallel_n)
            .into_par_iter()
            .map(|i| {
                let seed = derive_seed(base, &[0, i as u64]);
                let (handle, start) = EnvHandle::start(&self.task, &self.app, derive_seed(seed, &[0]))?;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
                self.rollout(handle, start, Vec::new(), None, &mut rng)
            })
            .collect();
        for r in rollouts {
            let ins = tree.insert_rollout(tree.root(), r?, BranchKind::Parallel)?;
            if ins.is_new_leaf() {
                stats.parallel += 1;
                self.judge_new(&mut tree, ins.leaf)?;
            } else {
                stats.duplicates += 1;
            }
        }
        Ok(tree)
    }

    fn fde_round(
        &self,
        tree: &mut TrajectoryTree,
        partition: &TreePartition,
        round: u32,
        stats: &mut ExpansionStats,
    ) -> Result<RoundRecord, CoExpansionError> {
        let arm = BranchKind::Fde;
        if partition.corr_trajectories.is_empty() {
            stats.skipped += 1;
            return Ok(RoundRecord::new(round, arm, RoundOutcome::GuardSkipped));
        }
        let base = self.config.base_seed;
        for n in fde_candidates(tree, partition) {
            if tree.node(n)?.step_success.is_none() {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base, &[3, n.0 as u64]));
                calc_step_success(
                    tree,
                    n,
                    &self.task.instruction,
                    self.oracles,
                    self.config.step_success_samples,
                    &mut rng,
                )?;
            }
        }
        let (node, score) = match select_fragile_node(tree, partition, self.config.exploration_c) {
            Ok(x) => x,
            Err(CoExpansionError::Precondition(_)) => {
                stats.skipped += 1;
                return Ok(RoundRecord::new(round, arm, RoundOutcome::NoCandidates));
            }
            Err(e) => return Err(e),
        };
        let mut rec = RoundRecord::new(round, arm, RoundOutcome::Stale);
        rec.selected = Some(node);
        rec.score = Some(score);
        let Some(steps) = self.expand_from(tree, node, None, derive_seed(base, &[1, round as u64]))? else {
            log::info!("task {}: round {round} fde replay diverged at node {node}", self.task.task_id);
            tree.mark_stale(node)?;
            stats.stale += 1;
            return Ok(rec);
        };
        let ins = tree.insert_rollout(node, steps, arm)?;
        tree.bump_fde(node)?;
        rec.leaf = Some(ins.leaf);
        if ins.is_new_leaf() {
            stats.fde += 1;
            rec.outcome = RoundOutcome::Inserted;
            self.judge_new(tree, ins.leaf)?;
        } else {
            stats.duplicates += 1;
            rec.outcome = RoundOutcome::Duplicate;
        }
        Ok(rec)
    }

    fn eir_round(
        &self,
        tree: &mut TrajectoryTree,
        partition: &TreePartition,
        round: u32,
        stats: &mut ExpansionStats,
    ) -> Result<RoundRecord, CoExpansionError> {
        let arm = BranchKind::Eir;
        if partition.fail_trajectories.is_empty() {
            stats.skipped += 1;
            return Ok(RoundRecord::new(round, arm, RoundOutcome::GuardSkipped));
        }
        let set = localize_errors(tree, partition, &self.task.instruction, self.oracles, self.config.k_cand)?;
        let (node, cand, score) = match select_recovery_node(&set, tree, self.config.exploration_c) {
            Ok(x) => x,
            Err(CoExpansionError::Precondition(_)) => {
                stats.skipped += 1;
                return Ok(RoundRecord::new(round, arm, RoundOutcome::NoCandidates));
            }
            Err(e) => return Err(e),
        };
        let mut rec = RoundRecord::new(round, arm, RoundOutcome::Stale);
        rec.selected = Some(node);
        rec.score = Some(score);
        rec.source_leaf = Some(cand.source_leaf);
        rec.step = Some(cand.step);
        let seed = derive_seed(self.config.base_seed, &[2, round as u64]);
        let Some(steps) = self.expand_from(tree, node, Some(&cand.guidance), seed)? else {
            log::info!("task {}: round {round} eir replay diverged at node {node}", self.task.task_id);
            tree.mark_stale(node)?;
            stats.stale += 1;
            return Ok(rec);
        };
        let ins = tree.insert_rollout(node, steps, arm)?;
        tree.bump_eir(node)?;
        rec.leaf = Some(ins.leaf);
        if ins.is_new_leaf() {
            stats.eir += 1;
            rec.outcome = RoundOutcome::Inserted;
            self.judge_new(tree, ins.leaf)?;
        } else {
            stats.duplicates += 1;
            rec.outcome = RoundOutcome::Duplicate;
        }
        Ok(rec)
    }
}

/// Grows one task's tree: `parallel_n` seed rollouts, then `rounds` rounds
/// of one FDE and one EIR expansion each, each arm guarded by its side of
/// the reward partition.
pub fn run_co_expansion(
    task: &TaskSpec,
    app: Arc<DeskApp>,
    config: &CoExpansionConfig,
    oracles: &OracleSet,
) -> Result<CoExpansionRun, CoExpansionError> {
    config.validate()?;
    let mut task = task.clone();
    task.max_steps = config.max_steps;
    task.validate()?;
    let runner = Runner {
        task: Arc::new(task),
        app,
        config,
        oracles,
    };
    let mut stats = ExpansionStats::default();
    let mut tree = runner.seed_tree(&mut stats)?;
    let mut rounds = Vec::with_capacity(2 * config.rounds as usize);
    for k in 0..config.rounds {
        let partition = tree.partition()?;
        rounds.push(runner.fde_round(&mut tree, &partition, k, &mut stats)?);
        rounds.push(runner.eir_round(&mut tree, &partition, k, &mut stats)?);
    }
    Ok(CoExpansionRun { tree, rounds, stats })
}
