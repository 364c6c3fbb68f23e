//! The replayable trajectory tree: observations as nodes, actions as edges.

pub mod persist;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Action, Observation, StateHash};
use crate::oracles::{HistoryStep, ProgressVerdict, RewardVerdict, StepLabel, TrajectoryRecord};

pub use persist::{read_tree, write_tree, ObservationStore, TREE_FORMAT, TREE_FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    Parallel,
    Fde,
    Eir,
}

impl BranchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BranchKind::Parallel => "parallel",
            BranchKind::Fde => "fde",
            BranchKind::Eir => "eir",
        }
    }
}

impl fmt::Display for BranchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sampled progress verdicts at a node and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSuccess {
    pub samples: Vec<u8>,
    pub mean: f64,
}

impl StepSuccess {
    pub fn from_samples(samples: Vec<u8>) -> Self {
        let mean = if samples.is_empty() {
            0.0
        } else {
            samples.iter().map(|&s| s as f64).sum::<f64>() / samples.len() as f64
        };
        StepSuccess { samples, mean }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: NodeId,
    pub observation: StateHash,
    pub parent_edge: Option<EdgeId>,
    pub children: Vec<EdgeId>,
    pub depth: u32,
    pub v_fde: u32,
    pub v_eir: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_success: Option<StepSuccess>,
    #[serde(default)]
    pub stale: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEdge {
    pub id: EdgeId,
    pub action: Action,
    pub source: NodeId,
    pub target: NodeId,
    pub branch_kind: BranchKind,
    pub agent_output: String,
    /// The environment flagged this transition as spurious.
    #[serde(default)]
    pub spurious: bool,
    /// Ground-truth injection record from scripted actors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<StepLabel>,
}

/// One executed step of a rollout, ready for insertion.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    pub action: Action,
    pub observation: Arc<Observation>,
    pub output: String,
    pub spurious: bool,
    pub label: Option<StepLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Insertion {
    pub leaf: NodeId,
    pub new_nodes: usize,
}

impl Insertion {
    /// False when the rollout retraced an existing path end to end.
    pub fn is_new_leaf(&self) -> bool {
        self.new_nodes > 0
    }
}

/// A root-to-leaf path. Its id is the leaf's node id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub leaf: NodeId,
    pub nodes: Vec<NodeId>,
    pub edges: Vec<EdgeId>,
}

impl Trajectory {
    /// Number of observations on the path.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TreePartition {
    pub corr_trajectories: BTreeSet<NodeId>,
    pub fail_trajectories: BTreeSet<NodeId>,
    pub corr_nodes: BTreeSet<NodeId>,
    pub fail_nodes: BTreeSet<NodeId>,
}

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("expansion refused: node {0} is stale")]
    ExpansionRefused(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("step index {index} out of range 2..={len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("trajectory ending at leaf {0} has no verdict")]
    IncompleteJudgment(NodeId),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTree {
    task_id: String,
    nodes: Vec<TreeNode>,
    edges: Vec<TreeEdge>,
    observations: BTreeMap<StateHash, Arc<Observation>>,
    verdicts: BTreeMap<NodeId, RewardVerdict>,
    critic_cache: BTreeMap<(StateHash, String), ProgressVerdict>,
}

impl TrajectoryTree {
    pub fn new(task_id: impl Into<String>, root: Observation) -> Self {
        let hash = root.state_hash;
        TrajectoryTree {
            task_id: task_id.into(),
            nodes: vec![TreeNode {
                id: NodeId(0),
                observation: hash,
                parent_edge: None,
                children: Vec::new(),
                depth: 0,
                v_fde: 0,
                v_eir: 0,
                step_success: None,
                stale: false,
            }],
            edges: Vec::new(),
            observations: BTreeMap::from([(hash, Arc::new(root))]),
            verdicts: BTreeMap::new(),
            critic_cache: BTreeMap::new(),
        }
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[TreeEdge] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> Result<&TreeNode, TreeError> {
        self.nodes.get(id.0 as usize).ok_or(TreeError::UnknownNode(id))
    }

    fn node_mut(&mut self, id: NodeId) -> Result<&mut TreeNode, TreeError> {
        self.nodes.get_mut(id.0 as usize).ok_or(TreeError::UnknownNode(id))
    }

    pub fn edge(&self, id: EdgeId) -> &TreeEdge {
        &self.edges[id.0 as usize]
    }

    pub fn observations(&self) -> &BTreeMap<StateHash, Arc<Observation>> {
        &self.observations
    }

    pub fn observation(&self, hash: StateHash) -> Option<&Arc<Observation>> {
        self.observations.get(&hash)
    }

    pub fn node_observation(&self, id: NodeId) -> Result<&Arc<Observation>, TreeError> {
        let hash = self.node(id)?.observation;
        self.observation(hash)
            .ok_or_else(|| TreeError::Integrity(format!("observation {hash} of node {id} is missing")))
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes
            .get(id.0 as usize)
            .is_some_and(|n| n.children.is_empty())
    }

    /// Appends a rollout under `start`. Leading steps that match an existing
    /// child edge on canonical action and observation hash follow that edge.
    pub fn insert_rollout(
        &mut self,
        start: NodeId,
        steps: Vec<RolloutStep>,
        kind: BranchKind,
    ) -> Result<Insertion, TreeError> {
        if self.node(start)?.stale {
            return Err(TreeError::ExpansionRefused(start));
        }
        let mut cursor = start;
        let mut new_nodes = 0;
        for step in steps {
            let hash = step.observation.state_hash;
            if new_nodes == 0 {
                let existing = self.nodes[cursor.0 as usize].children.iter().copied().find(|&e| {
                    let edge = &self.edges[e.0 as usize];
                    edge.action == step.action && self.nodes[edge.target.0 as usize].observation == hash
                });
                if let Some(e) = existing {
                    cursor = self.edges[e.0 as usize].target;
                    continue;
                }
            }
            let node_id = NodeId(self.nodes.len() as u32);
            let edge_id = EdgeId(self.edges.len() as u32);
            let depth = self.nodes[cursor.0 as usize].depth + 1;
            self.observations.entry(hash).or_insert(step.observation);
            self.edges.push(TreeEdge {
                id: edge_id,
                action: step.action,
                source: cursor,
                target: node_id,
                branch_kind: kind,
                agent_output: step.output,
                spurious: step.spurious,
                label: step.label,
            });
            self.nodes.push(TreeNode {
                id: node_id,
                observation: hash,
                parent_edge: Some(edge_id),
                children: Vec::new(),
                depth,
                v_fde: 0,
                v_eir: 0,
                step_success: None,
                stale: false,
            });
            self.nodes[cursor.0 as usize].children.push(edge_id);
            cursor = node_id;
            new_nodes += 1;
        }
        Ok(Insertion {
            leaf: cursor,
            new_nodes,
        })
    }

    /// Nodes from the root to `id`, inclusive.
    pub fn path_nodes(&self, id: NodeId) -> Result<Vec<NodeId>, TreeError> {
        let mut out = vec![id];
        let mut cur = self.node(id)?;
        while let Some(e) = cur.parent_edge {
            let src = self.edges[e.0 as usize].source;
            out.push(src);
            cur = &self.nodes[src.0 as usize];
        }
        out.reverse();
        Ok(out)
    }

    pub fn path_edges(&self, id: NodeId) -> Result<Vec<EdgeId>, TreeError> {
        let mut out = Vec::new();
        let mut cur = self.node(id)?;
        while let Some(e) = cur.parent_edge {
            out.push(e);
            cur = &self.nodes[self.edges[e.0 as usize].source.0 as usize];
        }
        out.reverse();
        Ok(out)
    }

    /// Actions along the unique root-to-node path.
    pub fn path_actions(&self, id: NodeId) -> Result<Vec<Action>, TreeError> {
        Ok(self
            .path_edges(id)?
            .into_iter()
            .map(|e| self.edges[e.0 as usize].action.clone())
            .collect())
    }

    /// Observation hashes along the root-to-node path, root first.
    pub fn path_hashes(&self, id: NodeId) -> Result<Vec<StateHash>, TreeError> {
        Ok(self
            .path_nodes(id)?
            .into_iter()
            .map(|n| self.nodes[n.0 as usize].observation)
            .collect())
    }

    fn dfs_leaves(&self, from: NodeId, out: &mut Vec<NodeId>) {
        let mut stack = vec![from];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n.0 as usize];
            if node.children.is_empty() {
                out.push(n);
            }
            for e in node.children.iter().rev() {
                stack.push(self.edges[e.0 as usize].target);
            }
        }
    }

    /// Leaves in depth-first order, children visited in insertion order.
    pub fn leaves(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        self.dfs_leaves(self.root(), &mut out);
        out
    }

    pub fn subtree_leaves(&self, id: NodeId) -> Result<Vec<NodeId>, TreeError> {
        self.node(id)?;
        let mut out = Vec::new();
        self.dfs_leaves(id, &mut out);
        Ok(out)
    }

    pub fn trajectory(&self, leaf: NodeId) -> Result<Trajectory, TreeError> {
        Ok(Trajectory {
            leaf,
            nodes: self.path_nodes(leaf)?,
            edges: self.path_edges(leaf)?,
        })
    }

    pub fn enumerate_trajectories(&self) -> Vec<Trajectory> {
        self.leaves()
            .into_iter()
            .map(|l| self.trajectory(l).expect("leaf exists"))
            .collect()
    }

    /// History entries for the path ending at `id`: one per edge, each with
    /// the observation the action was taken from.
    pub fn history(&self, id: NodeId) -> Result<Vec<HistoryStep>, TreeError> {
        self.path_edges(id)?
            .into_iter()
            .map(|e| {
                let edge = &self.edges[e.0 as usize];
                Ok(HistoryStep {
                    observation: Arc::clone(self.node_observation(edge.source)?),
                    output: edge.agent_output.clone(),
                    action: edge.action.clone(),
                    label: edge.label.clone(),
                })
            })
            .collect()
    }

    pub fn record(&self, leaf: NodeId) -> Result<TrajectoryRecord, TreeError> {
        Ok(TrajectoryRecord {
            steps: self.history(leaf)?,
            final_observation: Arc::clone(self.node_observation(leaf)?),
        })
    }

    pub fn set_verdict(&mut self, leaf: NodeId, verdict: RewardVerdict) -> Result<(), TreeError> {
        self.node(leaf)?;
        self.verdicts.insert(leaf, verdict);
        Ok(())
    }

    pub fn verdict(&self, leaf: NodeId) -> Option<&RewardVerdict> {
        self.verdicts.get(&leaf)
    }

    pub fn verdicts(&self) -> &BTreeMap<NodeId, RewardVerdict> {
        &self.verdicts
    }

    /// Splits trajectories and nodes by path membership under the given
    /// 0/1 verdicts keyed by leaf.
    pub fn prune_by_reward(&self, verdicts: &BTreeMap<NodeId, u8>) -> Result<TreePartition, TreeError> {
        let mut p = TreePartition::default();
        for t in self.enumerate_trajectories() {
            let r = *verdicts.get(&t.leaf).ok_or(TreeError::IncompleteJudgment(t.leaf))?;
            let (trajs, nodes) = if r == 1 {
                (&mut p.corr_trajectories, &mut p.corr_nodes)
            } else {
                (&mut p.fail_trajectories, &mut p.fail_nodes)
            };
            trajs.insert(t.leaf);
            nodes.extend(t.nodes);
        }
        Ok(p)
    }

    /// [`Self::prune_by_reward`] over the stored verdicts.
    pub fn partition(&self) -> Result<TreePartition, TreeError> {
        let v = self.verdicts.iter().map(|(k, v)| (*k, v.r_tau)).collect();
        self.prune_by_reward(&v)
    }

    /// B(o_i): outgoing edges of the i-th node (1-based) of the failed
    /// trajectory whose action differs from the trajectory's i-th action.
    /// Edges into stale nodes are left out.
    pub fn neighbor_branches(&self, failed_leaf: NodeId, i: usize) -> Result<Vec<EdgeId>, TreeError> {
        let nodes = self.path_nodes(failed_leaf)?;
        let edges = self.path_edges(failed_leaf)?;
        let t = edges.len();
        if i < 2 || i > t {
            return Err(TreeError::IndexOutOfRange { index: i, len: t });
        }
        let own = &self.edges[edges[i - 1].0 as usize].action;
        Ok(self.nodes[nodes[i - 1].0 as usize]
            .children
            .iter()
            .copied()
            .filter(|e| {
                let edge = &self.edges[e.0 as usize];
                &edge.action != own && !self.nodes[edge.target.0 as usize].stale
            })
            .collect())
    }

    fn path_has_stale(&self, leaf: NodeId) -> bool {
        let mut cur = &self.nodes[leaf.0 as usize];
        loop {
            if cur.stale {
                return true;
            }
            match cur.parent_edge {
                Some(e) => cur = &self.nodes[self.edges[e.0 as usize].source.0 as usize],
                None => return false,
            }
        }
    }

    /// N(τ): leaves of every trajectory that starts with an edge in some
    /// B(o_i), i = 2..T. Trajectories through stale nodes are left out.
    pub fn neighbor_trajectories(&self, failed_leaf: NodeId) -> Result<BTreeSet<NodeId>, TreeError> {
        let t = self.path_edges(failed_leaf)?.len();
        let mut out = BTreeSet::new();
        for i in 2..=t {
            for e in self.neighbor_branches(failed_leaf, i)? {
                let target = self.edges[e.0 as usize].target;
                for leaf in self.subtree_leaves(target)? {
                    if leaf != failed_leaf && !self.path_has_stale(leaf) {
                        out.insert(leaf);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn mark_stale(&mut self, id: NodeId) -> Result<(), TreeError> {
        self.node_mut(id)?.stale = true;
        Ok(())
    }

    pub fn bump_fde(&mut self, id: NodeId) -> Result<(), TreeError> {
        self.node_mut(id)?.v_fde += 1;
        Ok(())
    }

    pub fn bump_eir(&mut self, id: NodeId) -> Result<(), TreeError> {
        self.node_mut(id)?.v_eir += 1;
        Ok(())
    }

    pub fn set_step_success(&mut self, id: NodeId, est: StepSuccess) -> Result<(), TreeError> {
        self.node_mut(id)?.step_success = Some(est);
        Ok(())
    }

    /// Visit count of the parent; the root counts as its own parent.
    pub fn parent_visits(&self, id: NodeId, count: impl Fn(&TreeNode) -> u32) -> Result<u32, TreeError> {
        let node = self.node(id)?;
        Ok(match node.parent_edge {
            Some(e) => count(&self.nodes[self.edges[e.0 as usize].source.0 as usize]),
            None => count(node),
        })
    }

    pub fn cached_critic(&self, state: StateHash, action: &Action) -> Option<&ProgressVerdict> {
        self.critic_cache.get(&(state, action.canonical_form()))
    }

    pub fn cache_critic(&mut self, state: StateHash, action: &Action, verdict: ProgressVerdict) {
        self.critic_cache.insert((state, action.canonical_form()), verdict);
    }

    pub fn critic_cache(&self) -> &BTreeMap<(StateHash, String), ProgressVerdict> {
        &self.critic_cache
    }

    /// Structural checks: edge count, parent links, depths, edge-merge
    /// soundness and observation presence.
    pub fn check_invariants(&self) -> Result<(), TreeError> {
        let bad = |m: String| Err(TreeError::Integrity(m));
        if self.edges.len() + 1 != self.nodes.len() {
            return bad(format!("{} nodes but {} edges", self.nodes.len(), self.edges.len()));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id.0 as usize != i {
                return bad(format!("node at {i} has id {}", n.id));
            }
            if (i == 0) != n.parent_edge.is_none() {
                return bad(format!("node {i} has a wrong parent link"));
            }
            if !self.observations.contains_key(&n.observation) {
                return bad(format!("node {i} references a missing observation"));
            }
            let mut seen = BTreeSet::new();
            for e in &n.children {
                let edge = self.edges.get(e.0 as usize).ok_or_else(|| {
                    TreeError::Integrity(format!("node {i} lists unknown edge {e}"))
                })?;
                if edge.source != n.id {
                    return bad(format!("edge {e} listed under node {i} starts elsewhere"));
                }
                let key = (edge.action.canonical_form(), self.nodes[edge.target.0 as usize].observation);
                if !seen.insert(key) {
                    return bad(format!("node {i} has duplicate children"));
                }
            }
        }
        for (i, e) in self.edges.iter().enumerate() {
            if e.id.0 as usize != i {
                return bad(format!("edge at {i} has id {}", e.id));
            }
            let (Some(src), Some(dst)) = (self.nodes.get(e.source.0 as usize), self.nodes.get(e.target.0 as usize)) else {
                return bad(format!("edge {i} has a dangling endpoint"));
            };
            if dst.parent_edge != Some(e.id) || dst.depth != src.depth + 1 || !src.children.contains(&e.id) {
                return bad(format!("edge {i} is inconsistent with its endpoints"));
            }
        }
        Ok(())
    }

    /// Rebuilds a tree from parts; used by the persistence layer.
    pub(crate) fn from_parts(
        task_id: String,
        nodes: Vec<TreeNode>,
        edges: Vec<TreeEdge>,
        observations: BTreeMap<StateHash, Arc<Observation>>,
        verdicts: BTreeMap<NodeId, RewardVerdict>,
        critic_cache: BTreeMap<(StateHash, String), ProgressVerdict>,
    ) -> Result<Self, TreeError> {
        let tree = TrajectoryTree {
            task_id,
            nodes,
            edges,
            observations,
            verdicts,
            critic_cache,
        };
        if tree.nodes.is_empty() {
            return Err(TreeError::Format("tree has no root".to_string()));
        }
        tree.check_invariants()?;
        Ok(tree)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{DeskState, EpisodeStatus};

    fn obs(tag: u64) -> Arc<Observation> {
        let state = DeskState {
            vars: BTreeMap::from([("tag".to_string(), tag.to_string())]),
            focus: None,
            scroll: 0,
            status: EpisodeStatus::Running,
            popups: 0,
        };
        Arc::new(Observation {
            state_hash: state.digest(),
            widgets: Vec::new(),
            screen_note: format!("screen {tag}"),
            state,
        })
    }

    fn step(action: &str, tag: u64) -> RolloutStep {
        RolloutStep {
            action: Action::click(action),
            observation: obs(tag),
            output: format!("Action: CLICK({action})"),
            spurious: false,
            label: None,
        }
    }

    fn tree() -> TrajectoryTree {
        TrajectoryTree::new("t", (*obs(0)).clone())
    }

    #[test]
    fn three_steps_under_empty_root() {
        let mut t = tree();
        let ins = t
            .insert_rollout(t.root(), vec![step("a", 1), step("b", 2), step("c", 3)], BranchKind::Parallel)
            .unwrap();
        assert_eq!((t.nodes().len(), t.edges().len()), (4, 3));
        assert_eq!(ins.leaf, NodeId(3));
        assert_eq!(t.enumerate_trajectories().len(), 1);
        t.check_invariants().unwrap();
    }

    #[test]
    fn duplicate_first_step_reuses_edge() {
        let mut t = tree();
        t.insert_rollout(t.root(), vec![step("a", 1), step("b", 2)], BranchKind::Parallel)
            .unwrap();
        let ins = t
            .insert_rollout(t.root(), vec![step("a", 1), step("x", 5), step("y", 6)], BranchKind::Parallel)
            .unwrap();
        assert_eq!(ins.new_nodes, 2);
        assert_eq!(t.nodes().len(), 3 + 2);
        assert_eq!(t.leaves().len(), 2);
        t.check_invariants().unwrap();

        let dup = t
            .insert_rollout(t.root(), vec![step("a", 1), step("b", 2)], BranchKind::Fde)
            .unwrap();
        assert!(!dup.is_new_leaf());
        assert_eq!(t.leaves().len(), 2);

        // Same action, different observation: a separate edge.
        t.insert_rollout(t.root(), vec![step("a", 9)], BranchKind::Fde).unwrap();
        assert_eq!(t.node(t.root()).unwrap().children.len(), 2);
        t.check_invariants().unwrap();
    }

    #[test]
    fn stale_start_is_refused() {
        let mut t = tree();
        let ins = t.insert_rollout(t.root(), vec![step("a", 1)], BranchKind::Parallel).unwrap();
        t.mark_stale(ins.leaf).unwrap();
        assert!(matches!(
            t.insert_rollout(ins.leaf, vec![step("b", 2)], BranchKind::Fde),
            Err(TreeError::ExpansionRefused(_))
        ));
    }

    #[test]
    fn full_binary_tree_has_eight_trajectories() {
        let mut t = tree();
        let mut tag = 1;
        let mut frontier = vec![t.root()];
        for _ in 0..3 {
            let mut next = Vec::new();
            for n in frontier {
                for a in ["l", "r"] {
                    let ins = t.insert_rollout(n, vec![step(a, tag)], BranchKind::Parallel).unwrap();
                    tag += 1;
                    next.push(ins.leaf);
                }
            }
            frontier = next;
        }
        assert_eq!(t.enumerate_trajectories().len(), 8);
        assert!(t.enumerate_trajectories().iter().all(|p| p.len() == 4));
    }

    #[test]
    fn partition_shares_prefix_nodes() {
        let mut t = tree();
        let a = t.insert_rollout(t.root(), vec![step("a", 1), step("b", 2)], BranchKind::Parallel).unwrap();
        let b = t.insert_rollout(t.root(), vec![step("a", 1), step("c", 3)], BranchKind::Parallel).unwrap();
        let v = BTreeMap::from([(a.leaf, 1), (b.leaf, 0)]);
        let p = t.prune_by_reward(&v).unwrap();
        assert!(p.corr_nodes.contains(&NodeId(0)) && p.fail_nodes.contains(&NodeId(0)));
        assert!(p.corr_nodes.contains(&NodeId(1)) && p.fail_nodes.contains(&NodeId(1)));
        assert_eq!(p.corr_trajectories, BTreeSet::from([a.leaf]));
        assert!(matches!(
            t.prune_by_reward(&BTreeMap::from([(a.leaf, 1)])),
            Err(TreeError::IncompleteJudgment(_))
        ));
        let all = t.prune_by_reward(&BTreeMap::from([(a.leaf, 1), (b.leaf, 1)])).unwrap();
        assert!(all.fail_nodes.is_empty() && all.fail_trajectories.is_empty());
        assert_eq!(all.corr_nodes.len(), t.nodes().len());
    }

    #[test]
    fn neighbor_sets_on_small_trees() {
        let mut t = tree();
        let only = t.insert_rollout(t.root(), vec![step("a", 1), step("b", 2), step("c", 3)], BranchKind::Parallel).unwrap();
        assert!(t.neighbor_trajectories(only.leaf).unwrap().is_empty());
        assert!(t.neighbor_branches(only.leaf, 2).unwrap().is_empty());
        assert!(matches!(t.neighbor_branches(only.leaf, 1), Err(TreeError::IndexOutOfRange { .. })));
        assert!(matches!(t.neighbor_branches(only.leaf, 4), Err(TreeError::IndexOutOfRange { .. })));

        // o_2 gets two siblings; the B subtree below one of them has 3 leaves.
        let n1 = NodeId(1);
        let b = t.insert_rollout(n1, vec![step("x", 10)], BranchKind::Fde).unwrap();
        for (i, a) in ["p", "q", "r"].iter().enumerate() {
            t.insert_rollout(b.leaf, vec![step(a, 20 + i as u64)], BranchKind::Fde).unwrap();
        }
        t.insert_rollout(n1, vec![step("y", 30)], BranchKind::Fde).unwrap();
        assert_eq!(t.neighbor_branches(only.leaf, 2).unwrap().len(), 2);
        assert_eq!(t.neighbor_trajectories(only.leaf).unwrap().len(), 4);

        t.mark_stale(NodeId(b.leaf.0 + 1)).unwrap();
        assert_eq!(t.neighbor_trajectories(only.leaf).unwrap().len(), 3);
    }

    #[test]
    fn path_actions_and_history() {
        let mut t = tree();
        let ins = t
            .insert_rollout(t.root(), vec![step("a", 1), step("b", 2), step("c", 3), step("d", 4)], BranchKind::Parallel)
            .unwrap();
        assert!(t.path_actions(t.root()).unwrap().is_empty());
        let acts = t.path_actions(ins.leaf).unwrap();
        assert_eq!(acts, ["a", "b", "c", "d"].map(Action::click).to_vec());
        let rec = t.record(ins.leaf).unwrap();
        assert_eq!(rec.len(), 5);
        assert_eq!(rec.steps[2].observation.state_hash, obs(2).state_hash);
        assert!(matches!(t.path_actions(NodeId(99)), Err(TreeError::UnknownNode(_))));
    }

    #[test]
    fn parent_visits_of_root_is_its_own() {
        let mut t = tree();
        let ins = t.insert_rollout(t.root(), vec![step("a", 1)], BranchKind::Parallel).unwrap();
        t.bump_fde(t.root()).unwrap();
        t.bump_fde(t.root()).unwrap();
        assert_eq!(t.parent_visits(t.root(), |n| n.v_fde).unwrap(), 2);
        assert_eq!(t.parent_visits(ins.leaf, |n| n.v_fde).unwrap(), 2);
        assert_eq!(t.parent_visits(ins.leaf, |n| n.v_eir).unwrap(), 0);
    }
}
