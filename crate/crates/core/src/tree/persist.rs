//! Line-delimited tree files and the content-addressed observation store.
//!
//! A tree file starts with a header record, followed by node, edge, verdict
//! and critic records in that order, one JSON object per line. Observations
//! live in a separate directory keyed by state hash.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{NodeId, TrajectoryTree, TreeEdge, TreeError, TreeNode};
use crate::env::{Action, Observation, StateHash};
use crate::oracles::{ProgressVerdict, RewardVerdict};

pub const TREE_FORMAT: &str = "cotree-tree";
pub const TREE_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Header {
        format: String,
        version: u32,
        task_id: String,
        nodes: usize,
        edges: usize,
        verdicts: usize,
        critics: usize,
    },
    Node(TreeNode),
    Edge(TreeEdge),
    Verdict {
        leaf: NodeId,
        #[serde(flatten)]
        verdict: RewardVerdict,
    },
    Critic {
        state: StateHash,
        action: Action,
        #[serde(flatten)]
        verdict: ProgressVerdict,
    },
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Observations stored once under `<dir>/<state hash>.json`.
#[derive(Debug, Clone)]
pub struct ObservationStore {
    dir: PathBuf,
}

impl ObservationStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ObservationStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, hash: StateHash) -> PathBuf {
        self.dir.join(format!("{hash}.json"))
    }

    /// Stores the observation unless a blob with its hash already exists.
    pub fn put(&self, obs: &Observation) -> Result<StateHash, TreeError> {
        if obs.state.digest() != obs.state_hash {
            return Err(TreeError::Integrity(format!(
                "observation content does not match hash {}",
                obs.state_hash
            )));
        }
        let path = self.path(obs.state_hash);
        if !path.exists() {
            let bytes = serde_json::to_vec(obs).map_err(|e| TreeError::Format(e.to_string()))?;
            write_atomic(&path, &bytes)?;
        }
        Ok(obs.state_hash)
    }

    pub fn get(&self, hash: StateHash) -> Result<Observation, TreeError> {
        let path = self.path(hash);
        let bytes = fs::read(&path).map_err(|e| {
            TreeError::Integrity(format!("observation {hash} unreadable: {e}"))
        })?;
        let obs: Observation = serde_json::from_slice(&bytes)
            .map_err(|e| TreeError::Integrity(format!("observation {hash} corrupt: {e}")))?;
        if obs.state_hash != hash || obs.state.digest() != hash {
            return Err(TreeError::Integrity(format!("observation {hash} fails its content check")));
        }
        Ok(obs)
    }
}

fn line<T: Serialize>(out: &mut Vec<u8>, value: &T) -> Result<(), TreeError> {
    serde_json::to_writer(&mut *out, value).map_err(|e| TreeError::Format(e.to_string()))?;
    out.push(b'\n');
    Ok(())
}

/// Serializes the tree file bytes; deterministic for equal trees.
pub fn tree_bytes(tree: &TrajectoryTree) -> Result<Vec<u8>, TreeError> {
    let mut out = Vec::new();
    line(
        &mut out,
        &Record::Header {
            format: TREE_FORMAT.to_string(),
            version: TREE_FORMAT_VERSION,
            task_id: tree.task_id.clone(),
            nodes: tree.nodes.len(),
            edges: tree.edges.len(),
            verdicts: tree.verdicts.len(),
            critics: tree.critic_cache.len(),
        },
    )?;
    for n in &tree.nodes {
        line(&mut out, &Record::Node(n.clone()))?;
    }
    for e in &tree.edges {
        line(&mut out, &Record::Edge(e.clone()))?;
    }
    for (leaf, v) in &tree.verdicts {
        line(
            &mut out,
            &Record::Verdict {
                leaf: *leaf,
                verdict: v.clone(),
            },
        )?;
    }
    for ((state, action), v) in &tree.critic_cache {
        let action = Action::parse(action).map_err(|e| TreeError::Format(e.to_string()))?;
        line(
            &mut out,
            &Record::Critic {
                state: *state,
                action,
                verdict: v.clone(),
            },
        )?;
    }
    Ok(out)
}

/// Writes the tree file and every referenced observation.
pub fn write_tree(tree: &TrajectoryTree, path: &Path, store: &ObservationStore) -> Result<(), TreeError> {
    for obs in tree.observations.values() {
        store.put(obs)?;
    }
    write_atomic(path, &tree_bytes(tree)?)?;
    Ok(())
}

pub fn read_tree(path: &Path, store: &ObservationStore) -> Result<TrajectoryTree, TreeError> {
    let file = fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let parse = |text: &str, n: usize| {
        serde_json::from_str::<Record>(text)
            .map_err(|e| TreeError::Format(format!("{}:{n}: {e}", path.display())))
    };
    let first = lines
        .next()
        .ok_or_else(|| TreeError::Format(format!("{} is empty", path.display())))??;
    let Record::Header {
        format,
        version,
        task_id,
        nodes: n_nodes,
        edges: n_edges,
        verdicts: n_verdicts,
        critics: n_critics,
    } = parse(&first, 1)?
    else {
        return Err(TreeError::Format("first record is not a header".to_string()));
    };
    if format != TREE_FORMAT || version != TREE_FORMAT_VERSION {
        return Err(TreeError::Format(format!("unsupported tree format {format} v{version}")));
    }
    let mut nodes = Vec::with_capacity(n_nodes);
    let mut edges = Vec::with_capacity(n_edges);
    let mut verdicts = BTreeMap::new();
    let mut critics = BTreeMap::new();
    for (i, l) in lines.enumerate() {
        let l = l?;
        if l.is_empty() {
            continue;
        }
        match parse(&l, i + 2)? {
            Record::Header { .. } => return Err(TreeError::Format("duplicate header".to_string())),
            Record::Node(n) => nodes.push(n),
            Record::Edge(e) => edges.push(e),
            Record::Verdict { leaf, verdict } => {
                verdicts.insert(leaf, verdict);
            }
            Record::Critic { state, action, verdict } => {
                critics.insert((state, action.canonical_form()), verdict);
            }
        }
    }
    if (nodes.len(), edges.len(), verdicts.len(), critics.len()) != (n_nodes, n_edges, n_verdicts, n_critics) {
        return Err(TreeError::Integrity(format!(
            "{}: record counts do not match the header",
            path.display()
        )));
    }
    let mut observations = BTreeMap::new();
    for n in &nodes {
        if !observations.contains_key(&n.observation) {
            observations.insert(n.observation, Arc::new(store.get(n.observation)?));
        }
    }
    TrajectoryTree::from_parts(task_id, nodes, edges, observations, verdicts, critics)
}
