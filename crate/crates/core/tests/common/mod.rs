#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use cotree_core::env::{Action, DeskState, EpisodeStatus, Observation};
use cotree_core::oracles::RewardVerdict;
use cotree_core::tree::{BranchKind, NodeId, RolloutStep, StepSuccess, TrajectoryTree};
use rand::Rng;

/// Writes one result line straight to stderr so it survives output capture.
pub fn report(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

/// A content-consistent observation whose state is identified by `tag`.
pub fn obs(tag: u64) -> Arc<Observation> {
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
        screen_note: String::new(),
        state,
    })
}

pub fn step(action: usize, tag: u64) -> RolloutStep {
    RolloutStep {
        action: Action::click(format!("w{action}")),
        observation: obs(tag),
        output: String::new(),
        spurious: false,
        label: None,
    }
}

pub struct TreeShape {
    pub max_nodes: usize,
    pub max_depth: u32,
    pub alphabet: usize,
    pub obs_tags: u64,
}

/// A random tree grown by rollouts from random nodes. Small action and
/// observation alphabets make merges common.
pub fn random_tree<R: Rng>(rng: &mut R, shape: &TreeShape) -> TrajectoryTree {
    let mut tree = TrajectoryTree::new("random", (*obs(u64::MAX)).clone());
    let target = rng.gen_range(2..=shape.max_nodes);
    let mut attempts = 0;
    while tree.nodes().len() < target && attempts < 4 * shape.max_nodes {
        attempts += 1;
        let start = NodeId(rng.gen_range(0..tree.nodes().len()) as u32);
        let depth = tree.node(start).unwrap().depth;
        if depth >= shape.max_depth {
            continue;
        }
        let room = (shape.max_depth - depth) as usize;
        let budget = target - tree.nodes().len();
        let len = rng.gen_range(1..=room.min(4)).min(budget.max(1));
        let steps = (0..len)
            .map(|_| step(rng.gen_range(0..shape.alphabet), rng.gen_range(0..shape.obs_tags)))
            .collect();
        let kind = [BranchKind::Parallel, BranchKind::Fde, BranchKind::Eir][rng.gen_range(0..3)];
        tree.insert_rollout(start, steps, kind).unwrap();
    }
    tree
}

/// Random verdicts on every leaf, random step-success samples, visit
/// counts and stale flags on every node.
pub fn decorate<R: Rng>(rng: &mut R, tree: &mut TrajectoryTree, stale_p: f64) {
    for leaf in tree.leaves() {
        tree.set_verdict(
            leaf,
            RewardVerdict {
                r_tau: rng.gen_range(0..=1),
                experience: Default::default(),
            },
        )
        .unwrap();
    }
    for i in 0..tree.nodes().len() {
        let id = NodeId(i as u32);
        let samples = (0..4).map(|_| rng.gen_range(0..=1)).collect();
        tree.set_step_success(id, StepSuccess::from_samples(samples)).unwrap();
        for _ in 0..rng.gen_range(0..3) {
            tree.bump_fde(id).unwrap();
        }
        for _ in 0..rng.gen_range(0..3) {
            tree.bump_eir(id).unwrap();
        }
        if i > 0 && rng.gen_bool(stale_p) {
            tree.mark_stale(id).unwrap();
        }
    }
}
